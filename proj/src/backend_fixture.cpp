#include <sstream>

#include <json.hpp>

#include "ercforge/backend.hpp"
#include "ercforge/errors.hpp"
#include "ercforge/hash.hpp"
#include "ercforge/io.hpp"
#include "ercforge/strings.hpp"

namespace ercforge {

RecordedFixtureBackend::RecordedFixtureBackend(const std::filesystem::path& store_path) {
    std::istringstream in(slurp_file(store_path));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw DataError("fixture store line " + std::to_string(line_no) + ": " + e.what());
        }
        responses_by_prompt_digest_[j.at("prompt_hash").get<std::string>()] =
            j.at("text").get<std::string>();
    }
    if (responses_by_prompt_digest_.empty())
        throw DataError("fixture store is empty: " + store_path.string());
}

ModelHandle RecordedFixtureBackend::base_handle() const {
    ModelHandle h;
    h.backend_id = id();
    h.model_id = "fixture";
    return h;
}

GenerationResult RecordedFixtureBackend::generate(const ModelHandle&,
                                                  const GenerationRequest& request) {
    auto it = responses_by_prompt_digest_.find(digest(request.prompt));
    if (it == responses_by_prompt_digest_.end())
        throw BackendError(BackendError::Kind::ModelNotFound,
                           "no recorded response for prompt digest " + digest(request.prompt));
    GenerationResult result;
    result.text = it->second;
    result.finish_reason = FinishReason::Stop;
    result.token_count = whitespace_token_count(result.text);
    return result;
}

ModelHandle RecordedFixtureBackend::finetune(const ModelHandle&,
                                             const std::vector<InstructionExample>&,
                                             const AdapterParams&) {
    throw BackendError(BackendError::Kind::Rejected,
                       "the recorded-fixture backend cannot fine-tune");
}

int RecordedFixtureBackend::count_tokens(const std::string& text) const {
    return whitespace_token_count(text);
}

}  // namespace ercforge

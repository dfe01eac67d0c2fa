#include "ercforge/manifest.hpp"

#include <chrono>
#include <ctime>

#include "ercforge/errors.hpp"
#include "ercforge/hash.hpp"
#include "ercforge/io.hpp"

namespace ercforge {

using nlohmann::ordered_json;

std::string file_digest(const std::filesystem::path& path) {
    return digest(slurp_file(path));
}

std::string iso8601_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

namespace {

ordered_json stamps_to_json(const std::vector<FileStamp>& stamps) {
    ordered_json arr = ordered_json::array();
    for (const auto& s : stamps) {
        ordered_json j;
        j["name"] = s.name;
        j["path"] = s.path;
        j["digest"] = s.digest;
        arr.push_back(std::move(j));
    }
    return arr;
}

std::vector<FileStamp> stamps_from_json(const ordered_json& arr) {
    std::vector<FileStamp> out;
    for (const auto& j : arr)
        out.push_back({j.at("name").get<std::string>(), j.at("path").get<std::string>(),
                       j.at("digest").get<std::string>()});
    return out;
}

}  // namespace

void Manifest::write(const std::filesystem::path& path) const {
    ordered_json j;
    j["command"] = command;
    j["options"] = options;
    j["inputs"] = stamps_to_json(inputs);
    j["outputs"] = stamps_to_json(outputs);
    j["seeds"] = seeds;
    j["started_at"] = started_at;
    j["finished_at"] = finished_at;
    write_file(path, j.dump(2) + "\n");
}

Manifest Manifest::load(const std::filesystem::path& path) {
    ordered_json j;
    try {
        j = ordered_json::parse(slurp_file(path));
    } catch (const DataError&) {
        throw;
    } catch (const std::exception& e) {
        throw DataError("bad manifest " + path.string() + ": " + e.what());
    }
    Manifest m;
    m.command = j.at("command").get<std::string>();
    m.options = j.value("options", ordered_json::object());
    if (j.contains("inputs")) m.inputs = stamps_from_json(j["inputs"]);
    if (j.contains("outputs")) m.outputs = stamps_from_json(j["outputs"]);
    if (j.contains("seeds")) m.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    m.started_at = j.value("started_at", std::string());
    m.finished_at = j.value("finished_at", std::string());
    return m;
}

}  // namespace ercforge

// Run manifests: the persisted record from which any command's artifacts can
// be regenerated. Timing and other nondeterministic metadata stay here, never
// in the artifacts themselves.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace ercforge {

struct FileStamp {
    std::string name;
    std::string path;
    std::string digest;
};

struct Manifest {
    std::string command;
    nlohmann::ordered_json options;  // resolved flags; replayed by `rerun`
    std::vector<FileStamp> inputs;
    std::vector<FileStamp> outputs;
    std::vector<std::uint64_t> seeds;
    std::string started_at;
    std::string finished_at;

    void write(const std::filesystem::path& path) const;
    static Manifest load(const std::filesystem::path& path);
};

std::string file_digest(const std::filesystem::path& path);
std::string iso8601_now();

}  // namespace ercforge

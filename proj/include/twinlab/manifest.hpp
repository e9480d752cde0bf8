#pragma once
#include <string>
#include <vector>

#include <json.hpp>

namespace twinlab::manifest {

constexpr const char* kToolVersion = "0.1.0";

/* Record of one reproducible run: the resolved config plus content digests of
 * every file the run produced. Re-running the same manifest must reproduce
 * byte-identical primary outputs. */
struct ExperimentManifest {
    std::string command;
    nlohmann::json config;
    uint64_t master_seed = 0;
    std::string tool_version = kToolVersion;

    struct Output {
        std::string path;   // relative to the manifest's directory
        std::string sha256;
    };
    std::vector<Output> outputs;

    /* digest `file` (absolute or cwd-relative) and list it as `rel_path` */
    void record_output(const std::string& file, const std::string& rel_path);

    nlohmann::json to_json() const;
    static ExperimentManifest from_json(const nlohmann::json& j);

    void save(const std::string& path) const;
    static ExperimentManifest load(const std::string& path);
};

} // namespace twinlab::manifest

#include "twinlab/manifest.hpp"

#include <fstream>

#include "twinlab/common.hpp"
#include "twinlab/digest.hpp"

namespace twinlab::manifest {

void ExperimentManifest::record_output(const std::string& file, const std::string& rel_path) {
    outputs.push_back(Output{rel_path, digest::sha256_file(file)});
}

nlohmann::json ExperimentManifest::to_json() const {
    nlohmann::json outs = nlohmann::json::array();
    for (const auto& o : outputs) outs.push_back({{"path", o.path}, {"sha256", o.sha256}});
    return nlohmann::json{{"command", command},
                          {"config", config},
                          {"master_seed", master_seed},
                          {"tool_version", tool_version},
                          {"outputs", outs}};
}

ExperimentManifest ExperimentManifest::from_json(const nlohmann::json& j) {
    ExperimentManifest m;
    m.command = j.at("command").get<std::string>();
    m.config = j.at("config");
    m.master_seed = j.at("master_seed").get<uint64_t>();
    m.tool_version = j.at("tool_version").get<std::string>();
    for (const auto& o : j.at("outputs"))
        m.outputs.push_back(Output{o.at("path").get<std::string>(), o.at("sha256").get<std::string>()});
    return m;
}

void ExperimentManifest::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    check_runtime(bool(out), "cannot write manifest: " + path);
    out << to_json().dump(2) << "\n";
}

ExperimentManifest ExperimentManifest::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check_runtime(bool(in), "cannot read manifest: " + path);
    nlohmann::json j;
    in >> j;
    return from_json(j);
}

} // namespace twinlab::manifest

#include "dsr/json_util.hpp"

#include <fstream>

namespace dsr {

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError(path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void write_json_file(const std::filesystem::path& path, const json& value) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << value.dump(2) << '\n';
}

}  // namespace dsr

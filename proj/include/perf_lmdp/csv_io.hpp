#pragma once

#include <filesystem>
#include <string>

#include "perf_lmdp/mdp_core.hpp"

namespace plmdp {

/// Shortest-exact 17 significant digit rendering used for every float written.
std::string format_double(double x);

struct NamedMatrix {
    std::string name;
    Mat values;
};

/// Writes `# rows=<m> cols=<n> name=<id>` followed by row-major comma-separated values.
void write_matrix_csv(const std::filesystem::path& path, const Mat& m, const std::string& name);
void write_vector_csv(const std::filesystem::path& path, const Vec& v, const std::string& name);

/// Throws ConfigError on missing files, malformed headers or shape mismatches.
NamedMatrix read_matrix_csv(const std::filesystem::path& path);
Vec read_vector_csv(const std::filesystem::path& path);

}  // namespace plmdp

#include "perf_lmdp/csv_io.hpp"

#include <charconv>
#include <fmt/format.h>
#include <fstream>
#include <sstream>

#include "perf_lmdp/errors.hpp"

namespace plmdp {

std::string format_double(double x) { return fmt::format("{:.17g}", x); }

void write_matrix_csv(const std::filesystem::path& path, const Mat& m, const std::string& name) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << "# rows=" << m.rows() << " cols=" << m.cols() << " name=" << name << "\n";
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j > 0) out << ',';
            out << format_double(m(i, j));
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_vector_csv(const std::filesystem::path& path, const Vec& v, const std::string& name) {
    write_matrix_csv(path, Mat(v), name);
}

namespace {

double parse_double(const std::string& tok, const std::filesystem::path& path, int line) {
    std::string t = tok;
    while (!t.empty() && std::isspace(static_cast<unsigned char>(t.back()))) t.pop_back();
    size_t start = 0;
    while (start < t.size() && std::isspace(static_cast<unsigned char>(t[start]))) ++start;
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(t.data() + start, t.data() + t.size(), value);
    if (ec != std::errc() || ptr != t.data() + t.size()) {
        throw ConfigError(fmt::format("{}:{}: cannot parse number '{}'", path.string(), line, tok));
    }
    return value;
}

}  // namespace

NamedMatrix read_matrix_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open matrix file " + path.string());
    std::string header;
    std::getline(in, header);
    long rows = -1, cols = -1;
    std::string name;
    {
        std::istringstream hs(header);
        std::string tok;
        hs >> tok;
        if (tok != "#") throw ConfigError(path.string() + ":1: missing '# rows=.. cols=.. name=..' header");
        while (hs >> tok) {
            if (tok.rfind("rows=", 0) == 0) rows = std::stol(tok.substr(5));
            else if (tok.rfind("cols=", 0) == 0) cols = std::stol(tok.substr(5));
            else if (tok.rfind("name=", 0) == 0) name = tok.substr(5);
        }
    }
    if (rows < 0 || cols < 0) throw ConfigError(path.string() + ":1: header lacks rows or cols");
    NamedMatrix result{name, Mat(rows, cols)};
    std::string line;
    for (long i = 0; i < rows; ++i) {
        if (!std::getline(in, line)) {
            throw ConfigError(fmt::format("{}: expected {} data rows, found {}", path.string(), rows, i));
        }
        std::istringstream ls(line);
        std::string tok;
        long j = 0;
        while (std::getline(ls, tok, ',')) {
            if (j >= cols) throw ConfigError(fmt::format("{}:{}: too many columns", path.string(), i + 2));
            result.values(i, j++) = parse_double(tok, path, static_cast<int>(i + 2));
        }
        if (j != cols) throw ConfigError(fmt::format("{}:{}: expected {} columns, found {}", path.string(), i + 2, cols, j));
    }
    return result;
}

Vec read_vector_csv(const std::filesystem::path& path) {
    NamedMatrix m = read_matrix_csv(path);
    if (m.values.cols() == 1) return m.values.col(0);
    if (m.values.rows() == 1) return m.values.row(0).transpose();
    throw ConfigError(path.string() + ": expected a single row or column");
}

}  // namespace plmdp

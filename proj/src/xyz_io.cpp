#include "lbf/xyz_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace lbf {

namespace {

bool parse_double(const std::string& token, double& out) {
    const char* begin = token.data();
    const char* end = begin + token.size();
    const auto [ptr, ec] = std::from_chars(begin, end, out);
    return ec == std::errc() && ptr == end && std::isfinite(out);
}

}  // namespace

PointCloud read_xyz(const std::filesystem::path& path, std::ostream* warnings) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open file: " + path.string());

    PointCloud cloud;
    std::string line;
    long line_no = 0;
    int fields = 0;  // 3 or 6 once known
    bool warned = false;

    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::vector<std::string> tokens;
        std::string tok;
        while (ls >> tok) tokens.push_back(tok);
        if (tokens.empty()) continue;  // blank lines allowed

        if (tokens.size() != 3 && tokens.size() != 6)
            throw ParseError("expected 3 or 6 fields, got " + std::to_string(tokens.size()),
                             line_no);
        if (fields == 0)
            fields = static_cast<int>(tokens.size());
        else if (fields != static_cast<int>(tokens.size()))
            throw ParseError("field count changed mid-file", line_no);

        double v[6];
        for (std::size_t i = 0; i < tokens.size(); ++i)
            if (!parse_double(tokens[i], v[i]))
                throw ParseError("non-numeric token '" + tokens[i] + "'", line_no);

        cloud.points.emplace_back(v[0], v[1], v[2]);
        if (fields == 6) {
            Vec3 n(v[3], v[4], v[5]);
            const double len = n.norm();
            if (len <= 0.0) throw ParseError("zero-length normal", line_no);
            if (std::abs(len - 1.0) > 1e-3 && warnings && !warned) {
                *warnings << "warning: " << path.string() << ": normals are not unit length"
                          << " (first at line " << line_no << "); renormalizing\n";
                warned = true;
            }
            cloud.normals.push_back(n / len);
        }
    }
    if (cloud.points.empty()) throw ParseError("empty file", line_no == 0 ? 1 : line_no);
    return cloud;
}

void write_xyz(const PointCloud& cloud, const std::filesystem::path& path, int precision) {
    if (cloud.points.empty()) throw EmptyInput("write_xyz: empty cloud");
    if (cloud.has_normals() && cloud.normals.size() != cloud.points.size())
        throw ConfigMismatch("write_xyz: normals/points length mismatch");

    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot open file for writing: " + path.string());
    out.precision(precision);

    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
        const Vec3& p = cloud.points[i];
        out << p.x() << ' ' << p.y() << ' ' << p.z();
        if (cloud.has_normals()) {
            const Vec3& n = cloud.normals[i];
            out << ' ' << n.x() << ' ' << n.y() << ' ' << n.z();
        }
        out << '\n';
    }
    if (!out) throw Error("failed writing file: " + path.string());
}

}  // namespace lbf

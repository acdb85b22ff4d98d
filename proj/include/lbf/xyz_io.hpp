#pragma once

#include <filesystem>
#include <ostream>

#include "lbf/geometry.hpp"

namespace lbf {

/// Reads a whitespace-separated XYZ file: 3 fields per line (x y z) or 6
/// (x y z nx ny nz), constant across the file. Normals are renormalized to
/// unit length; a warning goes to `warnings` (when non-null) if any norm is
/// off by more than 1e-3. Throws ParseError with the line number on mixed
/// field counts, non-numeric tokens, or an empty file.
PointCloud read_xyz(const std::filesystem::path& path, std::ostream* warnings = nullptr);

/// Writes 3 or 6 columns (with normals when present) at the given number of
/// significant digits. Throws EmptyInput for an empty cloud; IO failures
/// surface as Error.
void write_xyz(const PointCloud& cloud, const std::filesystem::path& path, int precision = 9);

}  // namespace lbf

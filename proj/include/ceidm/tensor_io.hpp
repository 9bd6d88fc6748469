#pragma once

#include <filesystem>

#include "ceidm/numerics.hpp"

namespace ceidm {

// Raw little-endian row-major f64 files with a JSON sidecar ("<path>.json")
// carrying {"dtype": "f64", "order": "row-major", "shape": [...]}.
void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

// Feature-vector convenience: n x d row-major matrix as a [n, d] tensor.
void write_feature_matrix(const std::filesystem::path& path, const Mat& rows);
Mat read_feature_matrix(const std::filesystem::path& path);

}  // namespace ceidm

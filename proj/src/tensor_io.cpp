#include "ceidm/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "ceidm/errors.hpp"

namespace ceidm {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "f64 files are little-endian; big-endian hosts are unsupported");

static fs::path sidecar_path(const fs::path& path) {
  fs::path p = path;
  p += ".json";
  return p;
}

void write_tensor(const fs::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(sizeof(double) * t.data.size()));
  if (!out) throw IoError("short write: " + path.string());
  out.close();

  json side;
  side["dtype"] = "f64";
  side["order"] = "row-major";
  side["shape"] = t.shape;
  std::ofstream meta(sidecar_path(path), std::ios::trunc);
  if (!meta) throw IoError("cannot open for writing: " + sidecar_path(path).string());
  meta << side.dump(2) << "\n";
}

Tensor read_tensor(const fs::path& path) {
  std::ifstream meta(sidecar_path(path));
  if (!meta) throw IoError("missing sidecar: " + sidecar_path(path).string());
  json side;
  try {
    meta >> side;
  } catch (const json::parse_error& e) {
    throw ValidationError("bad sidecar " + sidecar_path(path).string() + ": " +
                          e.what());
  }
  if (!side.contains("shape") || !side["shape"].is_array())
    throw ValidationError("sidecar missing shape: " + sidecar_path(path).string());
  std::vector<Index> shape;
  Index total = 1;
  for (const auto& d : side["shape"]) {
    if (!d.is_number_integer() || d.get<Index>() <= 0)
      throw ValidationError("sidecar shape entries must be positive integers");
    shape.push_back(d.get<Index>());
    total *= shape.back();
  }

  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  Vec data(total);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(sizeof(double) * total));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(double) * total))
    throw ValidationError("file size does not match sidecar shape: " +
                          path.string());
  return Tensor(std::move(shape), std::move(data));
}

void write_feature_matrix(const fs::path& path, const Mat& rows) {
  Vec flat(rows.size());
  Index idx = 0;
  for (Index r = 0; r < rows.rows(); ++r)
    for (Index c = 0; c < rows.cols(); ++c) flat[idx++] = rows(r, c);
  write_tensor(path, Tensor({rows.rows(), rows.cols()}, std::move(flat)));
}

Mat read_feature_matrix(const fs::path& path) {
  Tensor t = read_tensor(path);
  if (t.shape.size() != 2)
    throw ValidationError("expected a rank-2 feature file, got rank " +
                          std::to_string(t.shape.size()) + ": " + path.string());
  Mat rows(t.shape[0], t.shape[1]);
  Index idx = 0;
  for (Index r = 0; r < rows.rows(); ++r)
    for (Index c = 0; c < rows.cols(); ++c) rows(r, c) = t.data[idx++];
  return rows;
}

}  // namespace ceidm

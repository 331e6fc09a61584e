#include "genspec/checkpoint.hpp"

#include <fstream>
#include <iterator>
#include <limits>

#include "binio.hpp"
#include "genspec/error.hpp"

namespace genspec {

namespace binio {

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "' for reading");
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const std::vector<char>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace binio

std::vector<char> encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  binio::Writer w;
  w.bytes("GMZW");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw DataError("tensor name too long: " + name);
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) w.u32(static_cast<std::uint32_t>(e));
    for (double v : t.data()) w.f64(v);
  }
  return std::move(w.buffer());
}

std::vector<NamedTensor> decode_checkpoint(const std::vector<char>& bytes) {
  binio::Reader r(bytes);
  if (r.bytes(4, "magic") != "GMZW") throw DataError("bad checkpoint magic", 0);
  const std::size_t version_at = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version), version_at);
  }
  const std::uint32_t count = r.u32("tensor count");
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = r.u16("name length");
    std::string name = r.bytes(len, "name");
    const std::size_t rank_at = r.offset();
    const std::uint32_t rank = r.u32("rank");
    if (rank > 8) throw DataError("implausible rank " + std::to_string(rank) + " for '" + name + "'", rank_at);
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::size_t at = r.offset();
      const std::uint32_t e = r.u32("extent");
      if (e == 0) throw DataError("zero extent in '" + name + "'", at);
      shape.push_back(e);
    }
    const std::size_t n = shape_numel(shape);
    r.need(n * 8, "tensor payload");
    std::vector<double> values(n);
    for (auto& v : values) v = r.f64("tensor payload");
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  if (r.remaining() != 0) throw DataError("trailing bytes after last tensor", r.offset());
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  binio::write_file(path, encode_checkpoint(tensors));
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(binio::read_file(path));
}

bool has_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

const Tensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
  for (const auto& t : tensors) {
    if (t.name == name) return t.tensor;
  }
  throw DataError("checkpoint has no tensor named '" + name + "'");
}

double find_scalar(const std::vector<NamedTensor>& tensors, const std::string& name) {
  const Tensor& t = find_tensor(tensors, name);
  if (t.numel() != 1) throw DataError("'" + name + "' is not a scalar");
  return t.item();
}

}  // namespace genspec

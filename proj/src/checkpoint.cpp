// Checkpoint layout (host byte order, little-endian on every supported target):
//
//   char[8]  magic "CONCFCK1"
//   u32      format version (1)
//   i32      num_users, num_items, dim
//   u8       sharing level
//   u8       head count, then one ASCII tag per head
//   u64      tensor count
//   per tensor: u32 name length, name bytes, i64 rows, i64 cols,
//               rows*cols f64 values in row-major order
//   u8       1 if Adam state follows, else 0
//   i64      Adam step; then first moments, then second moments, each as
//            rows*cols f64 per tensor in tensor order

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "concf/model.hpp"

namespace concf {
namespace {

constexpr char kMagic[8] = {'C', 'O', 'N', 'C', 'F', 'C', 'K', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint truncated");
  return value;
}

void put_matrix(std::ostream& out, const Matrix& m) {
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
}

void get_matrix(std::istream& in, Matrix& m) {
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
  if (!in) throw std::runtime_error("checkpoint truncated");
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const AdamState* adam) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
  const ModelShape& shape = params.shape();
  out.write(kMagic, sizeof kMagic);
  put(out, kVersion);
  put(out, static_cast<std::int32_t>(shape.num_users));
  put(out, static_cast<std::int32_t>(shape.num_items));
  put(out, static_cast<std::int32_t>(shape.dim));
  put(out, static_cast<std::uint8_t>(shape.sharing));
  put(out, static_cast<std::uint8_t>(shape.heads.size()));
  for (Head h : shape.heads) put(out, head_tag(h));
  put(out, static_cast<std::uint64_t>(params.tensors().size()));
  for (const auto& t : params.tensors()) {
    put(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put(out, static_cast<std::int64_t>(t.value.rows()));
    put(out, static_cast<std::int64_t>(t.value.cols()));
    put_matrix(out, t.value);
  }
  const bool with_adam = adam != nullptr && adam->m.size() == params.tensors().size();
  put(out, static_cast<std::uint8_t>(with_adam ? 1 : 0));
  if (with_adam) {
    put(out, static_cast<std::int64_t>(adam->step));
    for (const auto& m : adam->m) put_matrix(out, m);
    for (const auto& v : adam->v) put_matrix(out, v);
  }
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw std::runtime_error("not a checkpoint: " + path.string());
  if (get<std::uint32_t>(in) != kVersion)
    throw std::runtime_error("unsupported checkpoint version: " + path.string());

  ModelShape shape;
  shape.num_users = get<std::int32_t>(in);
  shape.num_items = get<std::int32_t>(in);
  shape.dim = get<std::int32_t>(in);
  const auto sharing = get<std::uint8_t>(in);
  if (sharing > static_cast<std::uint8_t>(SharingLevel::NoSharing))
    throw std::runtime_error("checkpoint has invalid sharing level");
  shape.sharing = static_cast<SharingLevel>(sharing);
  const auto nheads = get<std::uint8_t>(in);
  shape.heads.clear();
  for (std::uint8_t k = 0; k < nheads; ++k) {
    const char tag = get<char>(in);
    shape.heads.push_back(parse_head(std::string_view(&tag, 1)));
  }

  Checkpoint ck{ModelParams::zeros(shape), std::nullopt};
  auto& tensors = ck.params.mutable_tensors();
  const auto count = get<std::uint64_t>(in);
  if (count != tensors.size()) throw std::runtime_error("checkpoint tensor count does not match its shape");
  for (auto& t : tensors) {
    const auto len = get<std::uint32_t>(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto rows = get<std::int64_t>(in);
    const auto cols = get<std::int64_t>(in);
    if (name != t.name || rows != t.value.rows() || cols != t.value.cols())
      throw std::runtime_error("checkpoint tensor '" + name + "' does not match expected '" + t.name + "'");
    get_matrix(in, t.value);
  }
  if (get<std::uint8_t>(in) == 1) {
    AdamState adam = make_adam_state(ck.params);
    adam.step = get<std::int64_t>(in);
    for (auto& m : adam.m) get_matrix(in, m);
    for (auto& v : adam.v) get_matrix(in, v);
    ck.adam = std::move(adam);
  }
  return ck;
}

}  // namespace concf

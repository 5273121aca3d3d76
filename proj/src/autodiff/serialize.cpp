#include "mvaal/autodiff/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mvaal::ad {
namespace {

static_assert(std::endian::native == std::endian::little,
              "tensor blobs are written little-endian; big-endian hosts need byte swapping");

constexpr char kMagic[4] = {'M', 'V', 'T', '1'};

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) throw Error("tensor blob: truncated header");
  return v;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  const auto data = t.data();
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
}

Tensor read_tensor(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw Error("tensor blob: bad magic (expected MVT1)");
  }
  const auto rank = get_u32(in);
  if (rank > 16) throw Error("tensor blob: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = get_u32(in);
  std::vector<double> data(static_cast<std::size_t>(numel(shape)));
  if (!in.read(reinterpret_cast<char*>(data.data()),
               static_cast<std::streamsize>(data.size() * sizeof(double)))) {
    throw Error("tensor blob: truncated payload for shape " + shape_str(shape));
  }
  return Tensor(std::move(shape), std::move(data));
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  std::ostringstream os(std::ios::binary);
  write_tensor(os, t);
  const auto s = os.str();
  return {s.begin(), s.end()};
}

Tensor decode_tensor(const std::vector<std::uint8_t>& bytes) {
  std::istringstream is(std::string(bytes.begin(), bytes.end()), std::ios::binary);
  return read_tensor(is);
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read_tensor(in);
}

}  // namespace mvaal::ad

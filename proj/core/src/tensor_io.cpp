#include "simref/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace simref {

static_assert(std::endian::native == std::endian::little,
              "TNS1 reader/writer assumes a little-endian host");

static constexpr char kMagic[4] = {'T', 'N', 'S', '1'};
static constexpr uint32_t kMaxRank = 8;

void save_tns(const Tensor& t, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f.write(kMagic, 4);
  uint32_t rank = static_cast<uint32_t>(t.rank());
  f.write(reinterpret_cast<const char*>(&rank), 4);
  f.write(reinterpret_cast<const char*>(t.shape().data()), 4 * rank);
  f.write(reinterpret_cast<const char*>(t.data()),
          static_cast<std::streamsize>(t.numel() * sizeof(float)));
  if (!f) throw IoError("short write: " + path.string());
}

Tensor load_tns(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path.string());

  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("not a TNS1 file: " + path.string());
  }
  uint32_t rank = 0;
  f.read(reinterpret_cast<char*>(&rank), 4);
  if (!f || rank == 0 || rank > kMaxRank) {
    throw IoError("bad TNS1 rank in " + path.string());
  }
  Shape shape(rank);
  f.read(reinterpret_cast<char*>(shape.data()), 4 * rank);
  if (!f) throw IoError("truncated TNS1 header: " + path.string());
  for (uint32_t d : shape) {
    if (d == 0) throw IoError("zero extent in TNS1 shape: " + path.string());
  }
  size_t n = shape_numel(shape);
  if (n > (1ull << 31)) throw IoError("implausible TNS1 payload size: " + path.string());

  std::vector<float> data(n);
  f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (!f || static_cast<size_t>(f.gcount()) != n * sizeof(float)) {
    throw IoError("truncated TNS1 payload: " + path.string());
  }
  // exactly one tensor per file
  char extra;
  if (f.read(&extra, 1)) throw IoError("trailing bytes after TNS1 payload: " + path.string());
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace simref

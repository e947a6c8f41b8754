#include "sapl/archive.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace sapl {
namespace {

constexpr char kMagic[8] = {'S', 'A', 'P', 'L', 'A', 'R', 'C', '1'};
static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw ArchiveError("archive truncated");
  return v;
}
std::string get_str(std::istream& is) {
  const auto n = get_u32(is);
  if (n > (1u << 24)) throw ArchiveError("archive string too long");
  std::string s(n, '\0');
  if (!is.read(s.data(), n)) throw ArchiveError("archive truncated");
  return s;
}

}  // namespace

void Archive::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ArchiveError("cannot open for writing: " + path.string());
  os.write(kMagic, 8);
  put_u32(os, static_cast<std::uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    put_str(os, k);
    put_str(os, v);
  }
  put_u32(os, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& [name, m] : arrays) {
    put_str(os, name);
    put_u32(os, static_cast<std::uint32_t>(m.rows()));
    put_u32(os, static_cast<std::uint32_t>(m.cols()));
    os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!os) throw ArchiveError("write failed: " + path.string());
}

Archive Archive::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ArchiveError("cannot open archive: " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw ArchiveError("not an archive (bad magic): " + path.string());
  }
  Archive a;
  const auto n_meta = get_u32(is);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = get_str(is);
    a.meta[k] = get_str(is);
  }
  const auto n_arrays = get_u32(is);
  for (std::uint32_t i = 0; i < n_arrays; ++i) {
    std::string name = get_str(is);
    const auto rows = get_u32(is), cols = get_u32(is);
    ag::Matrix m(rows, cols);
    if (!is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)))) {
      throw ArchiveError("archive truncated in array " + name);
    }
    a.arrays[name] = std::move(m);
  }
  return a;
}

const ag::Matrix& Archive::array(const std::string& name) const {
  auto it = arrays.find(name);
  if (it == arrays.end()) throw ArchiveError("archive has no array named " + name);
  return it->second;
}

const std::string& Archive::get_meta(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw ArchiveError("archive has no metadata key " + key);
  return it->second;
}

}  // namespace sapl

#pragma once

// Key-value archive of named float64 arrays plus string metadata.
//
// Layout (all integers little-endian uint32):
//   "SAPLARC1"
//   n_meta, then n_meta x { key_len, key bytes, value_len, value bytes }
//   n_arrays, then n_arrays x { name_len, name bytes, rows, cols,
//                               rows*cols little-endian float64, row-major }

#include <filesystem>
#include <map>
#include <string>

#include "sapl/autograd.hpp"

namespace sapl {

struct Archive {
  std::map<std::string, std::string> meta;
  std::map<std::string, ag::Matrix> arrays;

  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);

  const ag::Matrix& array(const std::string& name) const;
  const std::string& get_meta(const std::string& key) const;
};

class ArchiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sapl

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "cbred/error.hpp"
#include "cbred/searchspace.hpp"

namespace cbred::test {

using Rng = std::mt19937_64;

// Code of the cbred::Error thrown by fn, or ErrorCode{} (0) when nothing is thrown.
template <class Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode{};
}

inline CellSpec random_cell(Rng& rng) {
  std::uniform_int_distribution<int> pick(0, static_cast<int>(kNumOps) - 1);
  CellSpec c;
  for (auto& op : c.ops) op = static_cast<OpKind>(pick(rng));
  return c;
}

inline ArchId random_id(Rng& rng) {
  return ArchId{static_cast<std::uint32_t>(std::uniform_int_distribution<std::uint32_t>(0, kSpaceSize - 1)(rng))};
}

// n distinct ids in random order.
inline std::vector<ArchId> random_distinct_ids(Rng& rng, std::size_t n) {
  std::vector<std::uint32_t> all(kSpaceSize);
  for (std::uint32_t i = 0; i < kSpaceSize; ++i) all[i] = i;
  std::shuffle(all.begin(), all.end(), rng);
  std::vector<ArchId> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(ArchId{all[i]});
  return out;
}

inline CellSpec cell_of(std::initializer_list<OpKind> ops) {
  CellSpec c;
  std::size_t e = 0;
  for (OpKind op : ops) c.ops[e++] = op;
  return c;
}

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("cbred-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace cbred::test

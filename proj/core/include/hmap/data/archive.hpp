#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hmap/data/image.hpp"
#include "hmap/errors.hpp"

namespace hmap::data {

// Layout (little-endian):
//   "MAPDATA1" | version u32 = 1 | record_count u64 |
//   per record: label u32 | C u32 | H u32 | W u32 | C*H*W f32 pixels
inline constexpr char kArchiveMagic[8] = {'M', 'A', 'P', 'D', 'A', 'T', 'A', '1'};
inline constexpr std::uint32_t kArchiveVersion = 1;

enum class ArchiveErrc {
  io_failure = 1,
  bad_magic = 2,
  version_mismatch = 3,
  truncated = 4,
  malformed = 5,
};

const char* to_string(ArchiveErrc code);

class ArchiveError : public Error {
 public:
  ArchiveError(ArchiveErrc code, const std::string& what)
      : Error(ErrorKind::data, std::string(to_string(code)) + ": " + what), code_(code) {}
  ArchiveErrc code() const noexcept { return code_; }

 private:
  ArchiveErrc code_;
};

class ArchiveWriter {
 public:
  explicit ArchiveWriter(const std::string& path);
  ~ArchiveWriter();
  ArchiveWriter(const ArchiveWriter&) = delete;
  ArchiveWriter& operator=(const ArchiveWriter&) = delete;

  void add(const DatasetRecord& record);
  /// Patches the record count into the header and closes the file.
  void finish();

 private:
  std::string path_;
  std::ofstream out_;
  std::uint64_t count_ = 0;
  bool finished_ = false;
};

/// Single-consumer stream over an archive file.
class ArchiveReader {
 public:
  explicit ArchiveReader(const std::string& path);

  std::uint64_t record_count() const { return count_; }
  std::optional<DatasetRecord> next();

 private:
  std::string path_;
  std::ifstream in_;
  std::uint64_t count_ = 0;
  std::uint64_t read_ = 0;
};

void write_archive(const std::string& path, std::span<const DatasetRecord> records);
std::vector<DatasetRecord> read_archive(const std::string& path);

}  // namespace hmap::data

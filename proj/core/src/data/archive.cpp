#include "hmap/data/archive.hpp"

#include <algorithm>
#include <cstring>
#include <limits>

#include "hmap/detail/binary_io.hpp"

namespace hmap::data {

using detail::get_le;
using detail::put_le;

const char* to_string(ArchiveErrc code) {
  switch (code) {
    case ArchiveErrc::io_failure: return "archive io failure";
    case ArchiveErrc::bad_magic: return "archive bad magic";
    case ArchiveErrc::version_mismatch: return "archive version mismatch";
    case ArchiveErrc::truncated: return "archive truncated";
    case ArchiveErrc::malformed: return "archive malformed";
  }
  return "archive error";
}

namespace {

// Largest image accepted by the reader; guards against allocating garbage sizes.
constexpr std::uint64_t kMaxPixels = std::uint64_t{1} << 28;

}  // namespace

ArchiveWriter::ArchiveWriter(const std::string& path)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw ArchiveError(ArchiveErrc::io_failure, "cannot open " + path + " for writing");
  out_.write(kArchiveMagic, sizeof(kArchiveMagic));
  put_le(out_, kArchiveVersion);
  put_le(out_, std::uint64_t{0});
}

ArchiveWriter::~ArchiveWriter() {
  if (!finished_) {
    try {
      finish();
    } catch (...) {
    }
  }
}

void ArchiveWriter::add(const DatasetRecord& record) {
  if (finished_) throw ContractError("ArchiveWriter::add after finish");
  const auto& img = record.image;
  if (img.pixels.size() != static_cast<std::size_t>(img.channels) * img.height * img.width) {
    throw DimensionError("record pixel buffer does not match its dimensions");
  }
  put_le(out_, record.label);
  put_le(out_, img.channels);
  put_le(out_, img.height);
  put_le(out_, img.width);
  detail::put_f32_array(out_, img.pixels);
  if (!out_) throw ArchiveError(ArchiveErrc::io_failure, "write failed: " + path_);
  ++count_;
}

void ArchiveWriter::finish() {
  if (finished_) return;
  finished_ = true;
  out_.seekp(static_cast<std::streamoff>(sizeof(kArchiveMagic) + sizeof(std::uint32_t)));
  put_le(out_, count_);
  out_.close();
  if (!out_) throw ArchiveError(ArchiveErrc::io_failure, "cannot finalize " + path_);
}

ArchiveReader::ArchiveReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw ArchiveError(ArchiveErrc::io_failure, "cannot open " + path);
  char magic[sizeof(kArchiveMagic)] = {};
  if (!in_.read(magic, sizeof(magic))) {
    throw ArchiveError(ArchiveErrc::truncated, path + ": header shorter than the magic");
  }
  if (std::memcmp(magic, kArchiveMagic, sizeof(magic)) != 0) {
    throw ArchiveError(ArchiveErrc::bad_magic, path + " is not a MAPDATA1 archive");
  }
  std::uint32_t version = 0;
  if (!get_le(in_, version)) throw ArchiveError(ArchiveErrc::truncated, path + ": missing version");
  if (version != kArchiveVersion) {
    throw ArchiveError(ArchiveErrc::version_mismatch,
                       path + ": version " + std::to_string(version) + ", expected " +
                           std::to_string(kArchiveVersion));
  }
  if (!get_le(in_, count_)) throw ArchiveError(ArchiveErrc::truncated, path + ": missing count");
}

std::optional<DatasetRecord> ArchiveReader::next() {
  if (read_ >= count_) return std::nullopt;
  const std::string where = path_ + " record " + std::to_string(read_);
  DatasetRecord rec;
  auto& img = rec.image;
  if (!get_le(in_, rec.label) || !get_le(in_, img.channels) || !get_le(in_, img.height) ||
      !get_le(in_, img.width)) {
    throw ArchiveError(ArchiveErrc::truncated, where + ": short record header");
  }
  const std::uint64_t pixels = std::uint64_t{img.channels} * img.height * img.width;
  if (pixels > kMaxPixels) {
    throw ArchiveError(ArchiveErrc::malformed, where + ": implausible image size");
  }
  img.pixels.resize(static_cast<std::size_t>(pixels));
  if (!detail::get_f32_array(in_, img.pixels)) {
    throw ArchiveError(ArchiveErrc::truncated, where + ": short pixel data");
  }
  ++read_;
  return rec;
}

void write_archive(const std::string& path, std::span<const DatasetRecord> records) {
  ArchiveWriter writer(path);
  for (const auto& r : records) writer.add(r);
  writer.finish();
}

std::vector<DatasetRecord> read_archive(const std::string& path) {
  ArchiveReader reader(path);
  std::vector<DatasetRecord> out;
  out.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(reader.record_count(), 1 << 20)));
  while (auto rec = reader.next()) out.push_back(std::move(*rec));
  return out;
}

}  // namespace hmap::data

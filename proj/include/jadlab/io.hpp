#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

namespace jadlab {

// Buffered CSV writer with deterministic number formatting. All doubles go
// through fixed printf formats so that identical runs produce byte-identical
// files (the determinism contract of a run bundle).
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::string& header);
  ~CsvWriter();

  CsvWriter(const CsvWriter&) = delete;
  CsvWriter& operator=(const CsvWriter&) = delete;

  // Appends one row. fmt is a printf format for the whole row (no newline).
  template <typename... Args>
  void row(const char* fmt, Args... args) {
    std::fprintf(file_, fmt, args...);
    std::fputc('\n', file_);
  }

  void flush();
  void close();

 private:
  std::FILE* file_ = nullptr;
};

// FNV-1a 64-bit. Not cryptographic; used for manifest/bundle fingerprints.
std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed = 1469598103934665603ULL);
std::uint64_t fnv1a64_file(const std::filesystem::path& path);
std::string hex64(std::uint64_t v);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// Splits one CSV line on commas (no quoting in our formats).
std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace jadlab

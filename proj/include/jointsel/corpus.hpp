#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "jointsel/core.hpp"

namespace jointsel {

class UnreadableFile : public Error {
 public:
  using Error::Error;
};
class EncodingError : public Error {
 public:
  using Error::Error;
};

enum class CorpusFormat {
  kTsv,        // one "src<TAB>trg" pair per line
  kMosesPair,  // two line-aligned files
};

CorpusFormat parse_corpus_format(std::string_view s);

bool is_valid_utf8(std::string_view s);

/// Streams PairRecords in file order with sequential ids. Malformed lines
/// (no TAB, several TABs, an empty side) are skipped and counted.
class CorpusReader {
 public:
  static CorpusReader tsv(const std::filesystem::path& path);
  static CorpusReader moses(const std::filesystem::path& src, const std::filesystem::path& trg);

  std::optional<PairRecord> next();

  std::uint64_t skipped() const noexcept { return skipped_; }
  std::uint64_t line() const noexcept { return line_; }

 private:
  CorpusReader() = default;

  CorpusFormat format_ = CorpusFormat::kTsv;
  std::filesystem::path src_path_;
  std::filesystem::path trg_path_;
  std::ifstream src_;
  std::ifstream trg_;
  PairId next_id_ = 0;
  std::uint64_t skipped_ = 0;
  std::uint64_t line_ = 0;
};

struct Corpus {
  std::vector<PairRecord> pairs;
  std::uint64_t skipped = 0;
};

/// Reads the whole corpus. `trg_path` is required for the moses format only.
Corpus ingest_corpus(const std::filesystem::path& path, CorpusFormat format,
                     const std::filesystem::path& trg_path = {});

}  // namespace jointsel

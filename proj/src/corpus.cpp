#include "jointsel/corpus.hpp"

#include <algorithm>

namespace jointsel {

namespace fs = std::filesystem;

CorpusFormat parse_corpus_format(std::string_view s) {
  if (s == "tsv") return CorpusFormat::kTsv;
  if (s == "moses") return CorpusFormat::kMosesPair;
  throw InvalidArgument("unknown corpus format '" + std::string(s) + "' (tsv|moses)");
}

bool is_valid_utf8(std::string_view s) {
  const auto* p = reinterpret_cast<const unsigned char*>(s.data());
  const auto* end = p + s.size();
  while (p < end) {
    const unsigned char c = *p;
    std::size_t len;
    std::uint32_t cp;
    if (c < 0x80) {
      ++p;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (static_cast<std::size_t>(end - p) < len) return false;
    for (std::size_t k = 1; k < len; ++k) {
      if ((p[k] & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (p[k] & 0x3F);
    }
    // Overlong forms, surrogates, and values past U+10FFFF.
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000) ||
        (cp >= 0xD800 && cp <= 0xDFFF) || cp > 0x10FFFF) {
      return false;
    }
    p += len;
  }
  return true;
}

namespace {

std::ifstream open_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UnreadableFile("cannot open corpus file '" + path.string() + "'");
  return in;
}

void strip_cr(std::string& s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
}

void check_utf8(const std::string& s, const fs::path& path, std::uint64_t line) {
  if (!is_valid_utf8(s)) {
    throw EncodingError("invalid UTF-8 in '" + path.string() + "' line " + std::to_string(line));
  }
}

}  // namespace

CorpusReader CorpusReader::tsv(const fs::path& path) {
  CorpusReader r;
  r.format_ = CorpusFormat::kTsv;
  r.src_path_ = path;
  r.src_ = open_text(path);
  return r;
}

CorpusReader CorpusReader::moses(const fs::path& src, const fs::path& trg) {
  CorpusReader r;
  r.format_ = CorpusFormat::kMosesPair;
  r.src_path_ = src;
  r.trg_path_ = trg;
  r.src_ = open_text(src);
  r.trg_ = open_text(trg);
  return r;
}

std::optional<PairRecord> CorpusReader::next() {
  std::string a;
  std::string b;
  while (true) {
    if (format_ == CorpusFormat::kTsv) {
      if (!std::getline(src_, a)) return std::nullopt;
      ++line_;
      strip_cr(a);
      check_utf8(a, src_path_, line_);
      const auto tab = a.find('\t');
      if (tab == std::string::npos || a.find('\t', tab + 1) != std::string::npos) {
        ++skipped_;
        continue;
      }
      b = a.substr(tab + 1);
      a.resize(tab);
    } else {
      const bool got_src = static_cast<bool>(std::getline(src_, a));
      const bool got_trg = static_cast<bool>(std::getline(trg_, b));
      if (!got_src && !got_trg) return std::nullopt;
      ++line_;
      if (got_src != got_trg) {
        throw UnreadableFile("aligned files differ in length: '" +
                             (got_src ? trg_path_ : src_path_).string() + "' ends at line " +
                             std::to_string(line_ - 1) + " while '" +
                             (got_src ? src_path_ : trg_path_).string() + "' continues");
      }
      strip_cr(a);
      strip_cr(b);
      check_utf8(a, src_path_, line_);
      check_utf8(b, trg_path_, line_);
    }
    if (a.empty() || b.empty()) {
      ++skipped_;
      continue;
    }
    return PairRecord::make(next_id_++, std::move(a), std::move(b));
  }
}

Corpus ingest_corpus(const fs::path& path, CorpusFormat format, const fs::path& trg_path) {
  CorpusReader reader = format == CorpusFormat::kTsv ? CorpusReader::tsv(path)
                                                     : CorpusReader::moses(path, trg_path);
  Corpus c;
  while (auto r = reader.next()) c.pairs.push_back(std::move(*r));
  c.skipped = reader.skipped();
  return c;
}

}  // namespace jointsel

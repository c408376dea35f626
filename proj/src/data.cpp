#include "mtlta/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mtlta/errors.hpp"

namespace mtlta {
namespace {

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_ascii_punct(unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; }

bool is_word_byte(unsigned char c) { return c >= 0x80 || std::isalnum(c) != 0 || c == '_'; }

// Lowercases ASCII and the Latin-1 capitals (U+00C0..U+00DE except U+00D7) encoded as UTF-8.
std::string lowercase(std::string_view s) {
  std::string out(s);
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto c = static_cast<unsigned char>(out[i]);
    if (c < 0x80) {
      out[i] = static_cast<char>(std::tolower(c));
    } else if (c == 0xC3 && i + 1 < out.size()) {
      auto d = static_cast<unsigned char>(out[i + 1]);
      if (d >= 0x80 && d <= 0x9E && d != 0x97) out[i + 1] = static_cast<char>(d + 0x20);
      ++i;
    }
  }
  return out;
}

bool starts_with_url(std::string_view chunk) {
  return chunk.starts_with("http://") || chunk.starts_with("https://") || chunk.starts_with("www.");
}

// Multi-byte punctuation common in Spanish text: inverted marks and guillemets.
std::size_t utf8_punct_len(std::string_view s, std::size_t i) {
  if (i + 1 < s.size() && static_cast<unsigned char>(s[i]) == 0xC2) {
    auto d = static_cast<unsigned char>(s[i + 1]);
    if (d == 0xA1 || d == 0xBF || d == 0xAB || d == 0xBB) return 2;
  }
  return 0;
}

void split_chunk(std::string_view chunk, std::vector<std::string>& out) {
  if (starts_with_url(chunk)) {
    out.emplace_back(kUrlToken);
    return;
  }
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };
  std::size_t i = 0;
  while (i < chunk.size()) {
    auto c = static_cast<unsigned char>(chunk[i]);
    if (c == '@' && i + 1 < chunk.size() && is_word_byte(static_cast<unsigned char>(chunk[i + 1])) &&
        utf8_punct_len(chunk, i + 1) == 0) {
      flush();
      ++i;
      while (i < chunk.size() && is_word_byte(static_cast<unsigned char>(chunk[i])) && utf8_punct_len(chunk, i) == 0)
        ++i;
      out.emplace_back(kUserToken);
      continue;
    }
    if (auto n = utf8_punct_len(chunk, i); n > 0) {
      flush();
      out.emplace_back(chunk.substr(i, n));
      i += n;
      continue;
    }
    if (is_ascii_punct(c)) {
      flush();
      out.emplace_back(1, static_cast<char>(c));
      ++i;
      continue;
    }
    word.push_back(static_cast<char>(c));
    ++i;
  }
  flush();
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    if (pos == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string lowered = lowercase(text);
  std::string_view s(lowered);
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !is_space(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) split_chunk(s.substr(i, j - i), out);
    i = j;
  }
  return out;
}

Vocabulary::Vocabulary() : tokens_{"<pad>", "<unk>"} {
  ids_.emplace(tokens_[0], kPad);
  ids_.emplace(tokens_[1], kUnk);
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& sequences, std::size_t min_count) {
  if (sequences.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
  std::unordered_map<std::string, std::size_t> counts;
  std::vector<std::string> order;
  for (const auto& seq : sequences) {
    for (const auto& tok : seq) {
      if (counts[tok]++ == 0) order.push_back(tok);
    }
  }
  Vocabulary v;
  for (const auto& tok : order) {
    if (counts[tok] < min_count || v.ids_.count(tok) != 0) continue;
    v.ids_.emplace(tok, v.tokens_.size());
    v.tokens_.push_back(tok);
  }
  return v;
}

std::size_t Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return ids_.count(std::string(token)) != 0; }

const std::string& Vocabulary::token(std::size_t id) const {
  if (id >= tokens_.size()) throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                                             std::to_string(tokens_.size()));
  return tokens_[id];
}

std::vector<std::size_t> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<std::size_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary to " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read vocabulary from " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  if (lines.size() < 2 || lines[0] != "<pad>" || lines[1] != "<unk>") {
    throw DataError(path.string() + ": vocabulary must start with <pad> and <unk>");
  }
  Vocabulary v;
  for (std::size_t i = 2; i < lines.size(); ++i) {
    if (!v.ids_.emplace(lines[i], v.tokens_.size()).second) {
      throw DataError(path.string() + ": duplicate token '" + lines[i] + "' on line " + std::to_string(i + 1));
    }
    v.tokens_.push_back(lines[i]);
  }
  return v;
}

std::vector<std::string> make_tai_input(const std::vector<std::string>& ts_tokens, const TaskSpec& task,
                                        std::size_t max_len) {
  auto td = tokenize(task.description);
  if (td.size() + 1 > max_len) {
    throw DataError("task description of '" + task.name + "' has " + std::to_string(td.size()) +
                    " tokens; with <sep> it does not fit max_len " + std::to_string(max_len));
  }
  std::vector<std::string> out = std::move(td);
  out.emplace_back(kSepToken);
  std::size_t room = max_len - out.size();
  std::size_t keep = std::min(room, ts_tokens.size());
  out.insert(out.end(), ts_tokens.begin(), ts_tokens.begin() + static_cast<std::ptrdiff_t>(keep));
  return out;
}

std::vector<std::string> make_plain_input(const std::vector<std::string>& ts_tokens, std::size_t max_len) {
  std::size_t keep = std::min(max_len, ts_tokens.size());
  return {ts_tokens.begin(), ts_tokens.begin() + static_cast<std::ptrdiff_t>(keep)};
}

std::vector<Example> load_tsv(const std::filesystem::path& path, const TaskSpec& task, std::size_t task_index) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw DataError(path.string() + ": empty file");
  if (!header.empty() && header.back() == '\r') header.pop_back();
  auto columns = split_tabs(header);
  auto column = [&](std::string_view name) -> std::ptrdiff_t {
    auto it = std::find(columns.begin(), columns.end(), name);
    return it == columns.end() ? -1 : it - columns.begin();
  };
  for (std::string_view required : {"id", "text", "label"}) {
    if (column(required) < 0) throw DataError(path.string() + ": missing column '" + std::string(required) + "'");
  }
  auto id_col = static_cast<std::size_t>(column("id"));
  auto text_col = static_cast<std::size_t>(column("text"));
  auto label_col = static_cast<std::size_t>(column("label"));
  std::ptrdiff_t lang_col = column("language");

  std::vector<Example> out;
  std::size_t line_no = 1;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() != columns.size()) {
      throw DataError(path.string() + ": row " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                      " fields, expected " + std::to_string(columns.size()) + " (embedded tabs are not allowed)");
    }
    if (lang_col >= 0 && fields[static_cast<std::size_t>(lang_col)] != "es") continue;
    const auto& label = fields[label_col];
    auto idx = task.label_index(label);
    if (!idx) {
      throw DataError(path.string() + ": row " + std::to_string(line_no) + " has unknown label '" + label +
                      "' for task '" + task.name + "'");
    }
    Example ex;
    ex.id = fields[id_col];
    ex.text = fields[text_col];
    ex.tokens = tokenize(ex.text);
    ex.label = *idx;
    ex.task_index = task_index;
    out.push_back(std::move(ex));
  }
  if (out.empty()) throw DataError(path.string() + ": no examples");
  return out;
}

void write_tsv(const std::filesystem::path& path, const std::vector<Example>& examples, const TaskSpec& task) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "id\ttext\tlabel\n";
  for (const auto& ex : examples) {
    if (ex.text.find_first_of("\t\n") != std::string::npos || ex.id.find_first_of("\t\n") != std::string::npos) {
      throw DataError("example '" + ex.id + "' contains a tab or newline");
    }
    out << ex.id << '\t' << ex.text << '\t' << task.labels.at(ex.label) << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<std::vector<std::size_t>> kfold(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("k", "k-fold needs k >= 2, got " + std::to_string(k));
  if (n < k) throw DataError("k-fold with k=" + std::to_string(k) + " needs at least k examples, got " + std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t base = n / k, extra = n % k, pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    std::size_t size = base + (f < extra ? 1 : 0);
    folds[f].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                    order.begin() + static_cast<std::ptrdiff_t>(pos + size));
    pos += size;
  }
  return folds;
}

}  // namespace mtlta

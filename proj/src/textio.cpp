#include <charconv>
#include <fstream>
#include <sstream>

#include "dtts/serialize.hpp"

namespace dtts {

namespace {

std::int64_t parse_int(const std::string& s, std::int64_t line, const char* what) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::runtime_error("line " + std::to_string(line) + ": bad " + what + " '" + s + "'");
  }
  return v;
}

std::int64_t resolve(const std::string& sym, const SymbolTable& table, std::int64_t line) {
  if (table.to_id.empty()) {
    const std::int64_t id = parse_int(sym, line, "symbol id");
    if (id < 0) throw std::runtime_error("line " + std::to_string(line) + ": negative symbol id");
    return id;
  }
  const auto it = table.to_id.find(sym);
  if (it == table.to_id.end()) {
    throw std::runtime_error("line " + std::to_string(line) + ": unknown symbol '" + sym + "'");
  }
  return it->second;
}

}  // namespace

std::vector<PhonemeSequence> read_phoneme_lines(const std::string& path, const SymbolTable& table) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  std::vector<PhonemeSequence> out;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream tokens(line);
    PhonemeSequence seq;
    std::string tok;
    int with_dur = -1;  // -1 undecided, 0 bare, 1 durations
    while (tokens >> tok) {
      const auto colon = tok.find(':');
      const bool has_dur = colon != std::string::npos;
      if (with_dur == -1) {
        with_dur = has_dur ? 1 : 0;
      } else if (with_dur != (has_dur ? 1 : 0)) {
        throw std::runtime_error("line " + std::to_string(line_no) +
                                 ": mixes tokens with and without durations");
      }
      if (has_dur) {
        const std::int64_t dur = parse_int(tok.substr(colon + 1), line_no, "duration");
        if (dur < 1) {
          throw std::runtime_error("line " + std::to_string(line_no) + ": duration must be >= 1 in '" +
                                   tok + "'");
        }
        seq.ids.push_back(resolve(tok.substr(0, colon), table, line_no));
        seq.gold_durations.push_back(dur);
      } else {
        seq.ids.push_back(resolve(tok, table, line_no));
      }
    }
    if (!seq.ids.empty()) out.push_back(std::move(seq));
  }
  return out;
}

PhonemeSequence read_phonemes(const std::string& path, const SymbolTable& table) {
  auto all = read_phoneme_lines(path, table);
  if (all.empty()) throw std::runtime_error("'" + path + "' contains no utterances");
  return all.front();
}

}  // namespace dtts

#pragma once

#include <map>
#include <string>
#include <vector>

#include "dtts/model.hpp"

namespace dtts {

// Binary model checkpoint ("DTTS"): version, length-prefixed JSON config,
// then one record per parameter tensor in schema order — length-prefixed
// name, dtype tag (f32), rank, u32 dims, raw little-endian payload.
// save -> load -> save is byte-identical.
void save_model(Model<float>& model, const std::string& path);
Model<float> load_model(const std::string& path);

// Binary feature dump ("DTTF"): version, profile tag, frame count, feature
// dim, raw f32 little-endian rows.
void write_features(const FeatureMatrix& fm, const std::string& path);
FeatureMatrix read_features(const std::string& path);

// Maps utterance-text symbols to ids. With an empty table, tokens are parsed
// as bare nonnegative integers (opaque-id mode).
struct SymbolTable {
  std::map<std::string, std::int64_t> to_id;
};

// One utterance per line; tokens are `symbol` or `symbol:durationFrames`,
// with durations all-or-none within a line. Blank lines are skipped. Errors
// carry 1-based line numbers.
std::vector<PhonemeSequence> read_phoneme_lines(const std::string& path, const SymbolTable& table);

// First utterance of the file; rejects empty files.
PhonemeSequence read_phonemes(const std::string& path, const SymbolTable& table);

}  // namespace dtts

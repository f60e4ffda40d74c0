#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "ltcm/config.hpp"
#include "ltcm/models.hpp"
#include "ltcm/optim.hpp"
#include "ltcm/random.hpp"
#include "ltcm/text.hpp"

namespace ltcm {

/// Everything besides parameters that a resumed run needs.
struct TrainingState {
  std::uint64_t epoch = 0;  // completed epochs
  std::uint64_t step = 0;   // optimiser updates so far
  Rng rng;
};

/// Binary layout, all integers little-endian u64 and payloads IEEE-754 f64:
///   magic "LTCMCKPT", format version,
///   config echo, RNG state, vocabulary tokens, stop-word ids,
///   epoch, step, Adam t,
///   parameter count, then per parameter: name, rows, cols, values, m, v.
/// Strings are a u64 length followed by raw bytes.
struct Checkpoint {
  struct Entry {
    std::string name;
    std::uint64_t rows = 0;
    std::uint64_t cols = 0;
    std::vector<double> value;
    std::vector<double> m;
    std::vector<double> v;
  };

  RunConfig config;
  std::vector<std::string> vocabulary;
  std::vector<int> stopwords;  // non-reserved stop-word ids in selection order
  TrainingState state;
  std::uint64_t adam_t = 0;
  std::vector<Entry> params;

  std::vector<std::uint8_t> serialize() const;
  static Checkpoint deserialize(std::span<const std::uint8_t> bytes);
};

/// Writes through a temporary file and a rename, so an interrupted save never
/// replaces the previous checkpoint.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint capture(const Model& model, const Adam* adam, const text::Vocabulary& vocab,
                   const TrainingState& state);

/// Copies parameters (and Adam moments when `adam` is given). Any missing,
/// extra or differently shaped parameter raises CheckpointError naming all of
/// them.
void restore(Model& model, Adam* adam, const Checkpoint& ckpt);

text::StopWords stopwords_of(const Checkpoint& ckpt);
text::Vocabulary vocabulary_of(const Checkpoint& ckpt);
std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace ltcm

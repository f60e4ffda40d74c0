#include "ltcm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ltcm/error.hpp"

namespace ltcm {

namespace {

constexpr char kMagic[8] = {'L', 'T', 'C', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint64_t kVersion = 1;

class Writer {
 public:
  void u64(std::uint64_t x) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
  }
  void f64(double x) { u64(std::bit_cast<std::uint64_t>(x)); }
  void str(const std::string& s) {
    u64(s.size());
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void doubles(const std::vector<double>& v) {
    for (double x : v) f64(x);
  }
  void raw(const char* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  std::uint64_t u64() {
    need(8);
    std::uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return x;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<double> doubles(std::uint64_t n) {
    if (n > (in_.size() - pos_) / 8) throw CheckpointError("checkpoint truncated");
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }
  bool raw_equals(const char* p, std::size_t n) {
    need(n);
    const bool eq = std::memcmp(in_.data() + pos_, p, n) == 0;
    pos_ += n;
    return eq;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > in_.size() - pos_) throw CheckpointError("checkpoint truncated");
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> Checkpoint::serialize() const {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u64(kVersion);
  w.str(config.serialize());
  w.str(serialize_rng(state.rng));
  w.u64(vocabulary.size());
  for (const auto& t : vocabulary) w.str(t);
  w.u64(stopwords.size());
  for (int id : stopwords) w.u64(static_cast<std::uint64_t>(id));
  w.u64(state.epoch);
  w.u64(state.step);
  w.u64(adam_t);
  w.u64(params.size());
  for (const auto& e : params) {
    w.str(e.name);
    w.u64(e.rows);
    w.u64(e.cols);
    w.doubles(e.value);
    w.doubles(e.m);
    w.doubles(e.v);
  }
  return w.take();
}

Checkpoint Checkpoint::deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (!r.raw_equals(kMagic, sizeof kMagic)) throw CheckpointError("not a checkpoint file (bad magic)");
  const auto version = r.u64();
  if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.config = RunConfig::parse(r.str());
  deserialize_rng(c.state.rng, r.str());
  c.vocabulary.resize(r.u64());
  for (auto& t : c.vocabulary) t = r.str();
  c.stopwords.resize(r.u64());
  for (auto& id : c.stopwords) id = static_cast<int>(r.u64());
  c.state.epoch = r.u64();
  c.state.step = r.u64();
  c.adam_t = r.u64();
  c.params.resize(r.u64());
  for (auto& e : c.params) {
    e.name = r.str();
    e.rows = r.u64();
    e.cols = r.u64();
    e.value = r.doubles(e.rows * e.cols);
    e.m = r.doubles(e.rows * e.cols);
    e.v = r.doubles(e.rows * e.cols);
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint payload");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = ckpt.serialize();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return Checkpoint::deserialize(bytes);
}

Checkpoint capture(const Model& model, const Adam* adam, const text::Vocabulary& vocab,
                   const TrainingState& state) {
  Checkpoint c;
  c.config = model.config();
  c.vocabulary = vocab.tokens();
  c.stopwords = model.stopwords().selected();
  c.state = state;
  c.adam_t = adam ? adam->t() : 0;
  const auto& store = model.params();
  const bool has_moments = adam && adam->moments().size() == store.size();
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& name = store.names()[i];
    const auto& t = store.get(name);
    Checkpoint::Entry e;
    e.name = name;
    e.rows = t.rows();
    e.cols = t.cols();
    e.value.assign(t.value().begin(), t.value().end());
    if (has_moments) {
      e.m = adam->moments()[i].m;
      e.v = adam->moments()[i].v;
    } else {
      e.m.assign(t.size(), 0.0);
      e.v.assign(t.size(), 0.0);
    }
    c.params.push_back(std::move(e));
  }
  return c;
}

void restore(Model& model, Adam* adam, const Checkpoint& ckpt) {
  auto& store = model.params();
  std::string problems;
  auto note = [&](const std::string& s) { problems += (problems.empty() ? "" : "; ") + s; };
  std::vector<const Checkpoint::Entry*> matched(store.size(), nullptr);
  for (const auto& e : ckpt.params) {
    if (!store.contains(e.name)) {
      note(e.name + " [" + std::to_string(e.rows) + " x " + std::to_string(e.cols) + "] not in model");
      continue;
    }
    const auto& t = store.get(e.name);
    if (t.rows() != e.rows || t.cols() != e.cols) {
      note(e.name + ": checkpoint [" + std::to_string(e.rows) + " x " + std::to_string(e.cols) +
           "] vs model " + t.shape_string());
      continue;
    }
    for (std::size_t i = 0; i < store.size(); ++i)
      if (store.names()[i] == e.name) matched[i] = &e;
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& name = store.names()[i];
    bool present = false;
    for (const auto& e : ckpt.params) present = present || e.name == name;
    if (!present) note(name + " " + store.get(name).shape_string() + " missing from checkpoint");
  }
  if (!problems.empty()) throw CheckpointError("architecture mismatch: " + problems);

  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& t = store.get(store.names()[i]);
    std::copy(matched[i]->value.begin(), matched[i]->value.end(), t.value().begin());
  }
  if (adam) {
    adam->ensure_moments(store);
    for (std::size_t i = 0; i < store.size(); ++i) {
      adam->moments()[i].m = matched[i]->m;
      adam->moments()[i].v = matched[i]->v;
    }
    adam->set_t(ckpt.adam_t);
  }
}

text::StopWords stopwords_of(const Checkpoint& ckpt) {
  text::StopWords s(ckpt.vocabulary.size());
  for (int id : ckpt.stopwords) {
    if (id < 0 || static_cast<std::size_t>(id) >= ckpt.vocabulary.size()) {
      throw CheckpointError("stop-word id " + std::to_string(id) + " outside the vocabulary");
    }
    s.insert(id);
  }
  return s;
}

text::Vocabulary vocabulary_of(const Checkpoint& ckpt) {
  try {
    return text::Vocabulary::from_tokens(ckpt.vocabulary);
  } catch (const Error& e) {
    throw CheckpointError(std::string("checkpoint vocabulary: ") + e.what());
  }
}

std::unique_ptr<Model> model_from_checkpoint(const Checkpoint& ckpt) {
  auto model = make_model(ckpt.config, ckpt.vocabulary.size(), stopwords_of(ckpt));
  restore(*model, nullptr, ckpt);
  return model;
}

}  // namespace ltcm

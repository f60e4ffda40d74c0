// Command-line front end: synth, train, generate, evaluate, topics.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ltcm/checkpoint.hpp"
#include "ltcm/config.hpp"
#include "ltcm/error.hpp"
#include "ltcm/metrics.hpp"
#include "ltcm/pipeline.hpp"
#include "ltcm/synth.hpp"
#include "ltcm/topic.hpp"
#include "ltcm/trainer.hpp"

namespace fs = std::filesystem;
using namespace ltcm;

namespace {

struct CommonOptions {
  std::string config_path;
  std::string preset = "desk";
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string checkpoint;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "Config file (key = value lines)");
  cmd->add_option("--preset", o.preset, "Base preset")->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--set", o.overrides, "Override one config key, e.g. --set epochs=20");
  cmd->add_option("--seed", o.seed, "Random seed");
  cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint file");
  cmd->add_option("--out", o.out, "Output path");
}

RunConfig apply_overrides(RunConfig cfg, const CommonOptions& o) {
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.apply(kv.substr(0, eq) + " = " + kv.substr(eq + 1));
  }
  if (o.seed) cfg.seed = *o.seed;
  cfg.validate();
  return cfg;
}

RunConfig resolve_config(const CommonOptions& o) {
  RunConfig cfg = preset(o.preset);
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw ConfigError("cannot open config file " + o.config_path);
    std::stringstream ss;
    ss << in.rdbuf();
    cfg.apply(ss.str());
  }
  return apply_overrides(std::move(cfg), o);
}

// Decoding and evaluation settings: the checkpoint's config with --set applied.
// The model itself is always built from the unmodified checkpoint config.
struct DecodeFlags {
  std::string latent, strategy, gate;
  std::optional<double> temperature;
  std::optional<std::size_t> n;
  std::size_t threads = 1;
};

GenerateOptions decode_options(const RunConfig& cfg, const DecodeFlags& f) {
  GenerateOptions opts = GenerateOptions::from(cfg);
  if (!f.latent.empty()) opts.latent = parse_latent_source(f.latent);
  if (!f.strategy.empty()) opts.strategy = parse_decode_strategy(f.strategy);
  if (!f.gate.empty()) opts.gate_mode = parse_gate_mode(f.gate);
  if (f.temperature) opts.temperature = *f.temperature;
  return opts;
}

std::vector<text::RawPair> load_pairs(const std::string& corpus, const std::string& split,
                                      const std::string& truth) {
  if (corpus.empty()) throw ConfigError("no corpus given (--corpus or config key 'corpus')");
  auto raw = text::read_corpus(corpus);
  if (split.empty() || split == "all") return raw;
  const fs::path truth_path = truth.empty() ? fs::path(corpus).parent_path() / "truth.tsv" : fs::path(truth);
  return select_split(raw, truth_path, parse_split(split));
}

std::vector<std::string> read_prompts(const fs::path& path) {
  std::vector<std::string> out;
  if (path.extension() == ".jsonl") {
    for (const auto& p : text::read_corpus(path)) out.push_back(p.prompt);
    return out;
  }
  std::ifstream in(path);
  if (!in) throw DataError("cannot open prompts file " + path.string());
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

std::vector<int> encode_prompt(const std::string& raw, const text::Vocabulary& vocab) {
  const auto tokens = text::tokenize(text::standardize(raw));
  if (tokens.empty()) throw InputError("empty prompt '" + raw + "'");
  return text::encode(tokens, vocab);
}

Checkpoint require_checkpoint(const CommonOptions& o) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  return load_checkpoint(o.checkpoint);
}

std::string epoch_name(std::uint64_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch-%04llu.ckpt", static_cast<unsigned long long>(epoch));
  return buf;
}

// synth

int cmd_synth(const SyntheticSpec& spec, const std::string& out) {
  if (out.empty()) throw ConfigError("--out directory is required");
  const auto corpus = synthesize(spec);
  write_synthetic(out, corpus, spec.seed);
  std::cout << "wrote " << corpus.pairs.size() << " pairs, " << spec.clusters << " clusters, "
            << corpus.stop_lexicon.size() << " stop-words to " << out << '\n';
  return 0;
}

// train

int cmd_train(const CommonOptions& o, const std::string& corpus_arg, const std::string& split,
              const std::string& truth) {
  RunConfig cfg = resolve_config(o);
  const std::string corpus = corpus_arg.empty() ? cfg.corpus : corpus_arg;
  const fs::path dir = o.out.empty() ? fs::path(cfg.checkpoint_dir) : fs::path(o.out);
  fs::create_directories(dir);
  const auto raw = load_pairs(corpus, split, truth);

  std::optional<Checkpoint> resume;
  std::optional<text::Vocabulary> fixed;
  if (!o.checkpoint.empty()) {
    resume = load_checkpoint(o.checkpoint);
    fixed = vocabulary_of(*resume);
  } else if (!cfg.vocab.empty()) {
    fixed = text::Vocabulary::load(cfg.vocab);
  }
  PreparedCorpus data = prepare_corpus(raw, cfg, fixed ? &*fixed : nullptr);
  if (resume) data.stopwords = stopwords_of(*resume);
  data.vocab.save(dir / "vocab.txt");
  std::cerr << "corpus: " << data.pairs.size() << " pairs kept (" << data.stats.empty << " empty, "
            << data.stats.non_roman << " non-roman, " << data.stats.too_long << " too long), vocabulary "
            << data.vocab.size() << ", stop-words " << data.stopwords.selected().size() << '\n';

  auto model = make_model(cfg, data.vocab.size(), data.stopwords);
  Trainer trainer(*model, data.pairs);
  if (resume) trainer.resume(*resume);

  std::ofstream log(dir / "train_log.jsonl", resume ? std::ios::app : std::ios::trunc);
  trainer.set_log(&log);
  try {
    trainer.train([&](const EpochSummary& s) {
      const auto ckpt = capture(*model, &trainer.adam(), data.vocab, trainer.state());
      save_checkpoint(dir / epoch_name(s.epoch), ckpt);
      save_checkpoint(dir / "last.ckpt", ckpt);
      log.flush();
      std::cerr << "epoch " << s.epoch << " step " << s.step << " objective " << s.objective
                << " reconstruction " << s.reconstruction << " kl " << s.kl << '\n';
    });
  } catch (const NumericError& e) {
    std::cerr << "training aborted: " << e.what() << "; last good checkpoint kept in " << dir.string()
              << '\n';
    throw;
  }
  return 0;
}

// generate

int cmd_generate(const CommonOptions& o, const std::string& prompts_path, const DecodeFlags& flags) {
  const Checkpoint ckpt = require_checkpoint(o);
  const auto vocab = vocabulary_of(ckpt);
  const auto model = model_from_checkpoint(ckpt);
  const RunConfig cfg = apply_overrides(model->config(), o);
  const GenerateOptions opts = decode_options(cfg, flags);
  const std::uint64_t seed = cfg.seed;
  if (prompts_path.empty()) throw ConfigError("--prompts is required");

  const auto raw = read_prompts(prompts_path);
  std::vector<std::vector<int>> prompts;
  for (const auto& p : raw) prompts.push_back(encode_prompt(p, vocab));
  const auto records = generate_all(*model, prompts, flags.n.value_or(cfg.n_responses), opts, seed, flags.threads);

  std::ofstream file;
  if (!o.out.empty()) {
    file.open(o.out, std::ios::binary | std::ios::trunc);
    if (!file) throw DataError("cannot write " + o.out);
  }
  std::ostream& out = o.out.empty() ? std::cout : file;
  const std::string tag(to_string(opts.latent));
  for (std::size_t i = 0; i < records.size(); ++i) {
    nlohmann::json rec;
    rec["prompt"] = raw[i];
    rec["latent"] = tag;
    rec["seed"] = derive_seed(seed, i);
    rec["responses"] = nlohmann::json::array();
    rec["gate_probs"] = nlohmann::json::array();
    for (const auto& g : records[i].responses) {
      rec["responses"].push_back(text::decode(g.tokens, vocab));
      rec["gate_probs"].push_back(g.gate_probs);
    }
    out << rec.dump() << '\n';
  }
  return 0;
}

// evaluate

int cmd_evaluate(const CommonOptions& o, const std::string& corpus_arg, const std::string& split,
                 const std::string& truth, const DecodeFlags& flags) {
  const Checkpoint ckpt = require_checkpoint(o);
  const auto vocab = vocabulary_of(ckpt);
  const auto model = model_from_checkpoint(ckpt);
  const RunConfig cfg = apply_overrides(model->config(), o);
  const std::string corpus = corpus_arg.empty() ? cfg.corpus : corpus_arg;
  const auto pairs = encode_corpus(load_pairs(corpus, split, truth), vocab, cfg.max_len);
  if (pairs.empty()) throw DataError("evaluation corpus is empty after filtering");

  EvaluateOptions eo;
  eo.generation = decode_options(cfg, flags);
  eo.n_responses = flags.n.value_or(cfg.n_responses);
  eo.batch_size = cfg.batch_size;
  eo.seed = cfg.seed;
  eo.threads = flags.threads;
  const MetricsReport report = evaluate(*model, pairs, eo);

  const fs::path dir = o.out.empty() ? fs::path(cfg.report_dir) : fs::path(o.out);
  fs::create_directories(dir);
  std::ofstream(dir / "metrics.txt", std::ios::binary | std::ios::trunc) << report.to_text();
  const fs::path csv = dir / "metrics.csv";
  const bool fresh = !fs::exists(csv);
  std::ofstream table(csv, std::ios::binary | std::ios::app);
  if (fresh) table << MetricsReport::csv_header() << '\n';
  table << report.csv_row() << '\n';
  std::cout << report.to_text();
  return 0;
}

// topics

int cmd_topics(const CommonOptions& o, std::size_t k_words, const std::string& corpus,
               const std::string& split, const std::string& truth) {
  const Checkpoint ckpt = require_checkpoint(o);
  const auto vocab = vocabulary_of(ckpt);
  const auto model = model_from_checkpoint(ckpt);
  const ad::Tensor* beta = nullptr;
  std::vector<double> candidates;
  if (const auto* ltcm = dynamic_cast<const LtcmModel*>(model.get())) {
    beta = &ltcm->beta();
    candidates = model->topic_mask();
  } else if (const auto* ntm = dynamic_cast<const NtmModel*>(model.get())) {
    beta = &ntm->beta();
    candidates.assign(vocab.size(), 1.0);
    for (std::size_t i = 0; i < text::kReservedCount; ++i) candidates[i] = 0.0;
  } else {
    throw ConfigError("topics needs an ltcm or ntm checkpoint, got " + std::string(to_string(model->kind())));
  }
  std::size_t available = 0;
  for (double c : candidates) available += c != 0.0;
  if (k_words > available) {
    std::cerr << "warning: k_words " << k_words << " exceeds the " << available
              << " candidate words; clamped\n";
  }

  std::ofstream file;
  if (!o.out.empty()) file.open(o.out, std::ios::binary | std::ios::trunc);
  std::ostream& out = o.out.empty() ? std::cout : file;
  const auto topics = top_words_per_topic(*beta, vocab, k_words, candidates);
  for (std::size_t t = 0; t < topics.size(); ++t) {
    out << "topic " << t << ':';
    for (const auto& w : topics[t]) out << ' ' << w;
    out << '\n';
  }
  if (!corpus.empty()) {
    const auto* ltcm = dynamic_cast<const LtcmModel*>(model.get());
    if (ltcm == nullptr) throw ConfigError("gate analysis needs an ltcm checkpoint");
    const auto pairs = encode_corpus(load_pairs(corpus, split, truth), vocab, model->config().max_len);
    out << "\ngate analysis (mean gate probability, %)\n";
    for (const auto& s : gate_analysis(*ltcm, pairs)) {
      out << vocab.token(s.id) << '\t' << s.percent << '\t' << s.count << '\n';
    }
  }
  return 0;
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 1;
  if (dynamic_cast<const DataError*>(&e)) return 2;
  if (dynamic_cast<const NumericError*>(&e) || dynamic_cast<const MetricError*>(&e)) return 3;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent topic conversational models"};
  app.require_subcommand(1);

  CommonOptions common;
  std::string corpus, split, truth, prompts;
  DecodeFlags flags;
  std::size_t k_words = 10;
  SyntheticSpec spec;

  auto* synth = app.add_subcommand("synth", "Write a synthetic clustered dialogue corpus");
  synth->add_option("--out", common.out, "Output directory")->required();
  synth->add_option("--pairs", spec.pairs, "Number of pairs");
  synth->add_option("--clusters", spec.clusters, "Number of topic clusters");
  synth->add_option("--words", spec.words_per_cluster, "Words per cluster");
  synth->add_option("--seed", spec.seed, "Random seed");

  auto* train = app.add_subcommand("train", "Train a model, checkpointing every epoch");
  add_common(train, common);
  train->add_option("--corpus", corpus, "JSONL corpus");
  train->add_option("--split", split, "train | dev | test | all (needs truth.tsv)");
  train->add_option("--truth", truth, "Split file (default: truth.tsv next to the corpus)");

  auto* generate = app.add_subcommand("generate", "Generate responses for prompts");
  add_common(generate, common);
  generate->add_option("--prompts", prompts, "Prompt file: one per line, or a JSONL corpus");
  const auto add_decode = [&flags](CLI::App* cmd) {
    cmd->add_option("--n", flags.n, "Responses per prompt");
    cmd->add_option("--latent", flags.latent, "auto | none | prior | conditional");
    cmd->add_option("--strategy", flags.strategy, "greedy | sample");
    cmd->add_option("--gate-mode", flags.gate, "sample | threshold | off");
    cmd->add_option("--temperature", flags.temperature, "Sampling temperature");
    cmd->add_option("--threads", flags.threads, "Worker threads");
  };
  add_decode(generate);

  auto* eval = app.add_subcommand("evaluate", "Corpus metrics: ppx, lowerbound, kl, unique, zipf");
  add_common(eval, common);
  eval->add_option("--corpus", corpus, "JSONL corpus");
  eval->add_option("--split", split, "train | dev | test | all");
  eval->add_option("--truth", truth, "Split file");
  add_decode(eval);

  auto* topics = app.add_subcommand("topics", "Top words per topic and gate analysis");
  add_common(topics, common);
  topics->add_option("--k", k_words, "Words per topic");
  topics->add_option("--corpus", corpus, "Corpus for gate analysis (ltcm only)");
  topics->add_option("--split", split, "train | dev | test | all");
  topics->add_option("--truth", truth, "Split file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) return cmd_synth(spec, common.out);
    if (train->parsed()) return cmd_train(common, corpus, split, truth);
    if (generate->parsed()) return cmd_generate(common, prompts, flags);
    if (eval->parsed()) return cmd_evaluate(common, corpus, split, truth, flags);
    if (topics->parsed()) return cmd_topics(common, k_words, corpus, split, truth);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  }
  return 1;
}

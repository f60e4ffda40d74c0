#include "ltcm/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "ltcm/error.hpp"

namespace ltcm {

double uniqueness(std::span<const std::vector<int>> responses) {
  if (responses.empty()) throw MetricError("uniqueness of an empty response list");
  const std::set<std::vector<int>> distinct(responses.begin(), responses.end());
  return 100.0 * static_cast<double>(distinct.size()) / static_cast<double>(responses.size());
}

double zipf_from_frequencies(std::vector<double> freq) {
  std::erase_if(freq, [](double f) { return f <= 0.0; });
  if (freq.size() < 2) throw MetricError("zipf coefficient needs at least two token types");
  std::sort(freq.begin(), freq.end(), std::greater<>());
  const std::size_t n = freq.size();
  std::vector<double> x(n), y(n);
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = std::log(static_cast<double>(i + 1));
    y[i] = std::log(freq[i]);
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return -sxy / sxx;
}

double zipf_coefficient(std::span<const std::vector<int>> responses) {
  std::map<int, double> counts;
  for (const auto& r : responses)
    for (int id : r)
      if (id != text::kPad && id != text::kBos && id != text::kEos) counts[id] += 1.0;
  std::vector<double> freq;
  freq.reserve(counts.size());
  for (const auto& [id, c] : counts) freq.push_back(c);
  return zipf_from_frequencies(std::move(freq));
}

std::vector<GenerationRecord> generate_all(const Model& model, std::span<const std::vector<int>> prompts,
                                           std::size_t n, const GenerateOptions& options,
                                           std::uint64_t seed, std::size_t threads) {
  std::vector<GenerationRecord> out(prompts.size());
  auto run_one = [&](std::size_t i) {
    Rng rng(derive_seed(seed, i));
    out[i].prompt_index = i;
    out[i].prompt = prompts[i];
    out[i].responses = model.generate(prompts[i], n, options, rng);
  };
  threads = std::max<std::size_t>(1, std::min(threads, prompts.size()));
  if (threads == 1) {
    for (std::size_t i = 0; i < prompts.size(); ++i) run_one(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < prompts.size(); i = next++) {
        try {
          run_one(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

namespace {

std::string format_value(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string format_optional(const std::optional<double>& v) { return v ? format_value(*v) : "n/a"; }

std::optional<double> parse_optional(const std::string& key, const std::string& v) {
  if (v == "n/a") return std::nullopt;
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw DataError("metrics report: bad value for '" + key + "': " + v);
  }
}

}  // namespace

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os << "model = " << model << '\n'
     << "perplexity = " << format_value(perplexity) << '\n'
     << "lowerbound = " << format_value(lowerbound) << '\n'
     << "kl = " << format_optional(kl) << '\n'
     << "uniqueness = " << format_optional(uniqueness) << '\n'
     << "zipf = " << format_optional(zipf) << '\n'
     << "prompts = " << prompts << '\n'
     << "responses = " << responses << '\n'
     << "tokens = " << tokens << '\n';
  return os.str();
}

MetricsReport MetricsReport::parse(std::string_view text) {
  MetricsReport r;
  std::istringstream in{std::string(text)};
  std::string line;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw DataError("metrics report: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq), v = line.substr(eq + 3);
    seen.insert(key);
    if (key == "model") r.model = v;
    else if (key == "perplexity") r.perplexity = parse_optional(key, v).value_or(NAN);
    else if (key == "lowerbound") r.lowerbound = parse_optional(key, v).value_or(NAN);
    else if (key == "kl") r.kl = parse_optional(key, v);
    else if (key == "uniqueness") r.uniqueness = parse_optional(key, v);
    else if (key == "zipf") r.zipf = parse_optional(key, v);
    else if (key == "prompts") r.prompts = static_cast<std::size_t>(parse_optional(key, v).value_or(0));
    else if (key == "responses") r.responses = static_cast<std::size_t>(parse_optional(key, v).value_or(0));
    else if (key == "tokens") r.tokens = static_cast<std::size_t>(parse_optional(key, v).value_or(0));
    else throw DataError("metrics report: unknown key '" + key + "'");
  }
  for (const char* k : {"model", "perplexity", "lowerbound", "kl", "uniqueness", "zipf"}) {
    if (!seen.contains(k)) throw DataError(std::string("metrics report: missing key '") + k + "'");
  }
  return r;
}

std::string MetricsReport::csv_header() { return "model,ppx,lowerbound,kl,unique,zipf,prompts,responses,tokens"; }

std::string MetricsReport::csv_row() const {
  std::ostringstream os;
  os << model << ',' << format_value(perplexity) << ',' << format_value(lowerbound) << ','
     << format_optional(kl) << ',' << format_optional(uniqueness) << ',' << format_optional(zipf) << ','
     << prompts << ',' << responses << ',' << tokens;
  return os.str();
}

std::vector<text::Batch> make_batches(std::span<const text::DialoguePair> corpus, std::size_t batch_size,
                                      std::size_t vocab_size, const text::StopWords& stopwords) {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  std::vector<text::Batch> out;
  for (std::size_t i = 0; i < corpus.size(); i += batch_size) {
    const std::size_t n = std::min(batch_size, corpus.size() - i);
    out.push_back(text::assemble_batch(corpus.subspan(i, n), vocab_size, stopwords));
  }
  return out;
}

MetricsReport evaluate(Model& model, std::span<const text::DialoguePair> corpus,
                       const EvaluateOptions& options) {
  if (corpus.empty()) throw DataError("evaluation corpus is empty");
  MetricsReport r;
  r.model = std::string(to_string(model.kind()));

  double log_prob = 0.0, bound = 0.0, kl = 0.0;
  std::size_t tokens = 0, sequences = 0;
  bool has_kl = false;
  const auto batches = make_batches(corpus, options.batch_size, model.vocab_size(), model.stopwords());
  for (std::size_t i = 0; i < batches.size(); ++i) {
    Rng rng(derive_seed(options.seed, i));
    const EvalTerms e = model.evaluate(batches[i], rng);
    log_prob += e.approx_log_prob;
    bound += e.bound;
    kl += e.kl;
    has_kl = e.has_kl;
    tokens += e.tokens;
    sequences += e.sequences;
  }
  if (tokens == 0) throw MetricError("evaluation corpus has no tokens");
  r.perplexity = std::exp(-log_prob / static_cast<double>(tokens));
  r.lowerbound = bound / static_cast<double>(sequences);
  if (has_kl) r.kl = kl / static_cast<double>(sequences);
  r.tokens = tokens;
  r.prompts = corpus.size();

  if (model.can_generate()) {
    std::vector<std::vector<int>> prompts;
    prompts.reserve(corpus.size());
    for (const auto& p : corpus) prompts.push_back(p.prompt);
    // Generation streams are disjoint from the evaluation streams above.
    const auto records = generate_all(model, prompts, options.n_responses, options.generation,
                                      splitmix64(options.seed ^ 0x5bd1e995ULL), options.threads);
    std::vector<std::vector<int>> responses;
    for (const auto& rec : records)
      for (const auto& g : rec.responses) responses.push_back(g.tokens);
    r.responses = responses.size();
    r.uniqueness = uniqueness(responses);
    try {
      r.zipf = zipf_coefficient(responses);
    } catch (const MetricError&) {
      r.zipf = std::nullopt;
    }
  }
  return r;
}

std::vector<GateStat> gate_analysis(const LtcmModel& model, std::span<const text::DialoguePair> corpus,
                                    std::size_t batch_size) {
  std::map<int, std::pair<double, std::size_t>> acc;
  for (const auto& batch : make_batches(corpus, batch_size, model.vocab_size(), model.stopwords())) {
    const auto probs = model.forced_gate_probabilities(batch);
    for (std::size_t i = 0; i < batch.response.size(); ++i) {
      if (batch.mask[i] == 0.0) continue;
      auto& [sum, count] = acc[batch.response[i]];
      sum += probs[i];
      ++count;
    }
  }
  std::vector<GateStat> out;
  for (const auto& [id, a] : acc) {
    out.push_back({id, 100.0 * a.first / static_cast<double>(a.second), a.second});
  }
  std::stable_sort(out.begin(), out.end(), [](const GateStat& a, const GateStat& b) {
    return a.percent > b.percent;
  });
  return out;
}

}  // namespace ltcm

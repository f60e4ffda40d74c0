#include <doctest.h>

#include <cmath>
#include <numeric>

#include "ltcm/error.hpp"
#include "ltcm/grad_check.hpp"
#include "ltcm/topic.hpp"
#include "support.hpp"

using namespace ltcm;
using testing::max_abs_diff;
using testing::random_tensor;

namespace {

void fill(ParameterStore& s, const std::string& name, double v) {
  for (auto& x : s.get(name).value()) x = v;
}

void copy_shared(const Model& from, Model& to) {
  for (const auto& name : to.params().names()) {
    const auto src = from.params().get(name).value();
    auto dst = to.params().get(name).value();
    REQUIRE(src.size() == dst.size());
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

GradCheckOptions model_check() {
  GradCheckOptions o;
  o.step = 1e-6;
  o.floor = 1e-5;
  return o;
}

struct Toy {
  text::Vocabulary vocab = testing::toy_vocab();
  text::StopWords stop = testing::stopwords(vocab, {"the", "a", "is"});
  text::Batch batch = testing::toy_batch(vocab, stop);
};

}  // namespace

TEST_CASE("topic proportion") {
  const auto w = ad::Tensor::from(2, 3, {0.3, -1, 2, 0.5, 0.1, -0.4});
  const auto uniform_theta = topic_proportion(ad::Tensor::zeros(1, 2), w);
  for (double t : uniform_theta.value()) CHECK(t == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  const auto theta = topic_proportion(ad::Tensor::row({1.0}), ad::Tensor::row({std::log(3.0), 0.0}));
  CHECK(theta.value()[0] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(theta.value()[1] == doctest::Approx(0.25).epsilon(1e-15));

  Rng rng(1);
  auto nu = random_tensor(2, 4, rng, -3, 3);
  auto proj = random_tensor(4, 5, rng);
  const auto probe = ad::Tensor::from(2, 5, {1, -2, 3, 0.5, -1, 2, 1, -0.3, 0.7, 1.1});
  CHECK(grad_check([&] { return ad::sum(ad::mul(topic_proportion(nu, proj), probe)); }, {{"nu", nu}}).max_rel_error <
        1e-6);

  for (int trial = 0; trial < 20; ++trial) {
    const auto t = topic_proportion(random_tensor(3, 4, rng, -10, 10, false), proj);
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 5; ++c) {
        CHECK(t.at(r, c) > 0.0);
        s += t.at(r, c);
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("fused word logits") {
  const std::vector<double> all = {1, 1, 1};
  SUBCASE("gate 0 leaves the seq2seq logits") {
    const auto base = ad::Tensor::row({0.3, -0.2, 1.7});
    const auto out = fused_word_logits(base, ad::Tensor::row({5, 6, 7}), std::vector<double>{0}, all);
    CHECK(max_abs_diff(out.value(), base.value()) == 0.0);
  }
  SUBCASE("zero base gives softmax of the topic term") {
    const auto topic = ad::Tensor::row({0.4, 1.0, -0.5});
    const auto p = ad::softmax_rows(fused_word_logits(ad::Tensor::zeros(1, 3), topic, std::vector<double>{1}, all));
    CHECK(max_abs_diff(p.value(), ad::softmax_rows(topic).value()) < 1e-16);
  }
  SUBCASE("hand example") {
    const auto p = ad::softmax_rows(fused_word_logits(ad::Tensor::row({1, 0, 0}), ad::Tensor::row({0, 1, 0}),
                                                      std::vector<double>{1}, all));
    const double z = 2.0 * std::exp(1.0) + 1.0;
    CHECK(p.value()[0] == doctest::Approx(std::exp(1.0) / z).epsilon(1e-15));
    CHECK(p.value()[1] == doctest::Approx(std::exp(1.0) / z).epsilon(1e-15));
    CHECK(p.value()[2] == doctest::Approx(1.0 / z).epsilon(1e-15));
  }
  SUBCASE("stop-word columns never take the topic term") {
    const std::vector<double> mask = {0, 1, 1};
    const auto out = fused_word_logits(ad::Tensor::row({1, 1, 1}), ad::Tensor::row({2, 3, 4}), std::vector<double>{1}, mask);
    CHECK(out.value()[0] == 1.0);
    CHECK(out.value()[1] == 4.0);
  }
}

TEST_CASE("gate log-likelihood") {
  Toy t;
  SUBCASE("zero gate weights give M ln 0.5") {
    LtcmModel m(testing::tiny_config(ModelKind::ltcm), t.vocab.size(), t.stop);
    fill(m.params(), "gate_w2", 0.0);
    Rng rng(2);
    const auto terms = m.loss(t.batch, 1.0, false, rng);
    CHECK(terms.gate_log_lik ==
          doctest::Approx(static_cast<double>(t.batch.target_tokens()) * std::log(0.5)).epsilon(1e-14));
    for (double p : m.forced_gate_probabilities(t.batch)) CHECK((p == 0.5 || p == 0.0));
  }
  SUBCASE("saturated logits that match the labels") {
    const std::vector<double> labels = {1, 0, 1, 0};
    const std::vector<double> mask = {1, 1, 1, 1};
    const auto ll = ad::bernoulli_log_likelihood(ad::Tensor::from(4, 1, {20, -20, 20, -20}), labels, mask);
    CHECK(ll.item() < 0.0);
    CHECK(ll.item() > -1e-8);
  }
  SUBCASE("gradient") {
    Rng rng(3);
    auto logits = random_tensor(5, 1, rng, -3, 3);
    const std::vector<double> labels = {1, 0, 0, 1, 1};
    const std::vector<double> mask = {1, 1, 0, 1, 1};
    CHECK(grad_check([&] { return ad::bernoulli_log_likelihood(logits, labels, mask); }, {{"logits", logits}})
              .max_rel_error < 1e-5);
  }
}

TEST_CASE("LTCM bound") {
  Toy t;
  auto cfg = testing::tiny_config(ModelKind::ltcm);

  SUBCASE("all-zero gate labels route no gradient to the topic path") {
    cfg.lambda_ma = 0.0;
    cfg.lambda_l2 = 0.0;
    for (bool tied : {true, false}) {
      CAPTURE(tied);
      cfg.tie_topic_proj = tied;
      LtcmModel m(cfg, t.vocab.size(), t.stop);
      auto b = t.batch;
      std::fill(b.gate_labels.begin(), b.gate_labels.end(), 0.0);
      std::fill(b.decoder_gate.begin(), b.decoder_gate.end(), 0.0);
      m.params().zero_grad();
      Rng rng(4);
      ad::Tape tape;
      ad::TapeScope scope(tape);
      tape.backward(m.loss(b, 1.0, true, rng).objective);
      for (const char* name : {"beta", "topic_proj_w1", "infer_proj_wa"}) {
        if (!m.params().contains(name)) continue;
        for (double g : m.params().get(name).grad()) CHECK(g == 0.0);
      }
      // The inference network still learns through the KL term.
      double infer = 0.0;
      for (double g : m.params().get("infer_net/mean/w2").grad()) infer += std::abs(g);
      CHECK(infer > 0.0);
    }
  }
  SUBCASE("with zero gates the seq2seq parameters see the plain seq2seq gradient") {
    cfg.lambda_ma = 0.0;
    cfg.lambda_l2 = 0.0;
    LtcmModel m(cfg, t.vocab.size(), t.stop);
    fill(m.params(), "gate_w2", 0.0);
    auto s2s_cfg = cfg;
    s2s_cfg.model = ModelKind::s2s;
    Seq2SeqModel s(s2s_cfg, t.vocab.size(), t.stop);
    copy_shared(m, s);
    auto b = t.batch;
    std::fill(b.decoder_gate.begin(), b.decoder_gate.end(), 0.0);
    std::fill(b.gate_labels.begin(), b.gate_labels.end(), 0.0);

    Rng r1(5), r2(5);
    m.params().zero_grad();
    s.params().zero_grad();
    {
      ad::Tape tape;
      ad::TapeScope scope(tape);
      tape.backward(m.loss(b, 0.0, false, r1).objective);
    }
    {
      ad::Tape tape;
      ad::TapeScope scope(tape);
      tape.backward(s.loss(b, 0.0, false, r2).objective);
    }
    for (const auto& name : s.params().names()) {
      CAPTURE(name);
      CHECK(max_abs_diff(m.params().get(name).grad(), s.params().get(name).grad()) < 1e-14);
    }
  }
  SUBCASE("q equal to p gives zero KL") {
    LtcmModel m(cfg, t.vocab.size(), t.stop);
    for (const char* part : {"mean", "log_var"}) {
      const std::string pn = std::string("prior_net/") + part, qn = std::string("infer_net/") + part;
      fill(m.params(), pn + "/w2", 0.0);
      fill(m.params(), qn + "/w2", 0.0);
      fill(m.params(), pn + "/b2", 0.25);
      fill(m.params(), qn + "/b2", 0.25);
    }
    Rng rng(6);
    CHECK(m.loss(t.batch, 1.0, false, rng).kl == 0.0);
  }
  SUBCASE("gradient with fixed noise matches finite differences") {
    for (bool tied : {true, false}) {
      CAPTURE(tied);
      cfg.tie_topic_proj = tied;
      LtcmModel m(cfg, t.vocab.size(), t.stop);
      const auto r = grad_check(
          [&] {
            Rng rng(7);
            return m.loss(t.batch, 1.0, false, rng).objective;
          },
          m.params(), model_check());
      CAPTURE(r.worst_parameter);
      CHECK(r.max_rel_error < 1e-3);
    }
  }
  SUBCASE("missing gate labels") {
    LtcmModel m(cfg, t.vocab.size(), t.stop);
    auto b = t.batch;
    b.decoder_gate.clear();
    Rng rng(8);
    CHECK_THROWS_AS(m.loss(b, 1.0, false, rng), TrainingError);
  }
}

TEST_CASE("LTCM approximate perplexity") {
  Toy t;
  auto cfg = testing::tiny_config(ModelKind::ltcm);
  LtcmModel m(cfg, t.vocab.size(), t.stop);

  Rng a(9), b(10);
  const auto e1 = m.evaluate(t.batch, a);
  const auto e2 = m.evaluate(t.batch, b);
  CHECK(e1.approx_log_prob == e2.approx_log_prob);

  fill(m.params(), "beta", 0.0);
  fill(m.params(), "gate_w2", 0.0);
  auto s2s_cfg = cfg;
  s2s_cfg.model = ModelKind::s2s;
  Seq2SeqModel s(s2s_cfg, t.vocab.size(), t.stop);
  copy_shared(m, s);
  const double s2s_nll = s.decode_loss(t.batch, {}).item();
  const auto e = m.evaluate(t.batch, a);
  const double n = static_cast<double>(e.tokens);
  const double ltcm_ppx = std::exp(-e.approx_log_prob / n);
  const double s2s_ppx = std::exp(s2s_nll / n);
  CHECK(ltcm_ppx == doctest::Approx(2.0 * s2s_ppx).epsilon(1e-12));
}

TEST_CASE("beta regularizers") {
  const auto ortho = ad::Tensor::from(2, 2, {1, 0, 0, 2});
  CHECK(mutual_angular(ortho).item() == 0.0);
  CHECK(beta_regularizers(ortho, 0.0, 1.0).item() == 5.0);
  CHECK(beta_regularizers(ortho, 7.0, 1.0).item() == 5.0);

  const auto dup = ad::Tensor::from(3, 2, {1, 1, 2, 2, -1, -1});
  CHECK(mutual_angular(dup).item() == doctest::Approx(1.0).epsilon(1e-15));
  // Three columns: one parallel pair, two orthogonal pairs.
  const auto three = ad::Tensor::from(2, 3, {1, 3, 0, 0, 0, 1});
  CHECK(mutual_angular(three).item() == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const auto with_zero = ad::Tensor::from(2, 2, {1, 0, 1, 0});
  CHECK(mutual_angular(with_zero).item() == 0.0);

  Rng rng(11);
  const auto beta = random_tensor(6, 4, rng, -1, 1, false);
  auto scaled = ad::Tensor::from(6, 4, std::vector<double>(beta.value().begin(), beta.value().end()));
  for (std::size_t i = 0; i < 6; ++i) scaled.at(i, 2) *= 3.7;
  CHECK(mutual_angular(scaled).item() == doctest::Approx(mutual_angular(beta).item()).epsilon(1e-13));

  auto b = random_tensor(6, 4, rng);
  CHECK(grad_check([&] { return beta_regularizers(b, 0.7, 0.3); }, {{"beta", b}}).max_rel_error < 1e-6);
}

TEST_CASE("top words per topic") {
  const auto v = testing::toy_vocab();
  auto beta = ad::Tensor::zeros(v.size(), 2);
  beta.at(static_cast<std::size_t>(v.lookup("cat")), 0) = 1.0;
  const auto top = top_words_per_topic(beta, v, 3);
  CHECK(top[0][0] == "cat");
  // Column 1 is flat: plain lexicographic order over all tokens.
  auto tokens = v.tokens();
  std::sort(tokens.begin(), tokens.end());
  CHECK(top[1] == std::vector<std::string>(tokens.begin(), tokens.begin() + 3));

  std::vector<double> candidates(v.size(), 0.0);
  candidates[static_cast<std::size_t>(v.lookup("red"))] = 1.0;
  candidates[static_cast<std::size_t>(v.lookup("dog"))] = 1.0;
  const auto only = top_words_per_topic(beta, v, 5, candidates);
  CHECK(only[1] == std::vector<std::string>{"dog", "red"});
}

TEST_CASE("neural topic model") {
  Toy t;
  auto cfg = testing::tiny_config(ModelKind::ntm);

  SUBCASE("uniform topics give 1/L per word") {
    NtmModel m(cfg, t.vocab.size(), t.stop);
    fill(m.params(), "beta", 0.0);
    Rng rng(12);
    const auto theta = topic_proportion(random_tensor(3, cfg.latent, rng, -2, 2, false), m.topic_projection());
    const auto p = m.word_probabilities(theta);
    for (double x : p.value()) CHECK(x == doctest::Approx(1.0 / static_cast<double>(t.vocab.size())).epsilon(1e-15));
  }
  SUBCASE("one topic reduces to a multinomial") {
    cfg.topics = 1;
    NtmModel m(cfg, t.vocab.size(), t.stop);
    Rng r1(13), r2(13);
    const auto e = m.evaluate(t.batch, r1);
    const auto& beta = m.beta();
    double lse = 0.0, mx = -1e300;
    for (std::size_t i = 0; i < beta.rows(); ++i) mx = std::max(mx, beta.at(i, 0));
    for (std::size_t i = 0; i < beta.rows(); ++i) lse += std::exp(beta.at(i, 0) - mx);
    lse = mx + std::log(lse);
    double ll = 0.0;
    for (std::size_t i = 0; i < t.batch.prompt_bow.size(); ++i) {
      const double c = t.batch.prompt_bow[i] + t.batch.response_bow[i];
      ll += c * (beta.at(i % t.vocab.size(), 0) - lse);
    }
    CHECK(e.bound == doctest::Approx(ll - e.kl).epsilon(1e-13));
  }
  SUBCASE("gradient with fixed noise") {
    NtmModel m(cfg, t.vocab.size(), t.stop);
    const auto r = grad_check(
        [&] {
          Rng rng(14);
          return m.loss(t.batch, 1.0, true, rng).objective;
        },
        m.params(), model_check());
    CAPTURE(r.worst_parameter);
    CHECK(r.max_rel_error < 1e-3);
  }
  SUBCASE("empty bag of words") {
    NtmModel m(cfg, t.vocab.size(), t.stop);
    const std::vector<text::DialoguePair> pairs = {{{text::kUnk}, {text::kNumber}}};
    const auto b = text::assemble_batch(pairs, t.vocab, t.stop);
    Rng rng(15);
    CHECK_THROWS_AS(m.loss(b, 1.0, true, rng), InputError);
    CHECK_FALSE(m.can_generate());
  }
}

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include <doctest.h>

#include <odisc/common.hpp>
#include <odisc/grammar.hpp>
#include <odisc/gvae.hpp>

using namespace odisc;

namespace {

const char* kTinyGrammar =
    "S -> S '+' E | E\n"
    "E -> E '*' V | V\n"
    "V -> 'x' | 'y' | 'z'\n";

Grammar tiny_grammar() { return load_grammar(kTinyGrammar, 8); }

GvaeConfig tiny_config() {
  GvaeConfig c;
  c.d_z = 4;
  c.hidden = 5;
  c.conv_channels = {5, 6, 7};
  c.conv_kernels = {2, 2, 3};
  return c;
}

std::vector<OneHotMatrix> tiny_dataset(const Grammar& g, int n,
                                       std::uint64_t seed) {
  auto rng = make_rng(seed);
  std::set<std::string> seen;
  std::vector<OneHotMatrix> out;
  while (static_cast<int>(out.size()) < n) {
    RuleSequence s = sample(g, rng);
    if (!seen.insert(generate(g, s)).second) continue;
    out.push_back(encode_one_hot(g, s));
  }
  return out;
}

}  // namespace

TEST_SUITE_BEGIN("gvae");

TEST_CASE("construction is seeded and shaped") {
  Grammar g = tiny_grammar();
  CHECK(g.total_rules() == 8);
  GvaeModel a(g, tiny_config(), 42);
  GvaeModel b(g, tiny_config(), 42);
  GvaeModel c(g, tiny_config(), 43);
  CHECK(a.n_params() == b.n_params());
  CHECK(a.params() == b.params());
  CHECK(a.params() != c.params());
  CHECK(a.n_max() == 8);
  CHECK(a.n_rules() == 8);
  CHECK(a.grammar_hash() == g.hash());
}

TEST_CASE("kernels wider than the sequence are rejected") {
  Grammar g = tiny_grammar();
  GvaeConfig bad = tiny_config();
  bad.conv_kernels = {7, 8, 9};
  CHECK_THROWS_AS(GvaeModel(g, bad, 1), Error);
}

TEST_CASE("encode is deterministic and input sensitive") {
  Grammar g = tiny_grammar();
  GvaeModel m(g, tiny_config(), 5);
  OneHotMatrix x = tiny_dataset(g, 1, 3)[0];
  Eigen::VectorXd mu1, lv1, mu2, lv2;
  m.encode(x, mu1, lv1);
  m.encode(x, mu2, lv2);
  CHECK(mu1.allFinite());
  CHECK(lv1.allFinite());
  CHECK(mu1 == mu2);
  CHECK(lv1 == lv2);

  OneHotMatrix y = x;
  int row = 0;
  while (y.row(row).maxCoeff() == y.row(row)(g.padding_index - 1)) ++row;
  y.row(row).setZero();
  y(row, g.padding_index - 1) = 1.0;
  Eigen::VectorXd mu3, lv3;
  m.encode(y, mu3, lv3);
  CHECK((mu3 - mu1).norm() > 0.0);

  OneHotMatrix wrong(3, 3);
  CHECK_THROWS_AS(m.encode(wrong, mu1, lv1), Error);
}

TEST_CASE("reparametrization matches its definition") {
  Eigen::VectorXd mean(3), logvar(3);
  mean << 0.5, -1.0, 2.0;
  logvar << -800.0, -800.0, -800.0;
  CHECK(reparametrize(mean, logvar, 7) == mean);

  logvar.setConstant(std::log(0.25));
  CHECK(reparametrize(mean, logvar, 9) == reparametrize(mean, logvar, 9));
  CHECK(reparametrize(mean, logvar, 9) != reparametrize(mean, logvar, 10));

  Eigen::VectorXd acc = Eigen::VectorXd::Zero(3);
  Eigen::VectorXd acc2 = Eigen::VectorXd::Zero(3);
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd z = reparametrize(mean, logvar, 1000 + i);
    acc += z;
    acc2 += z.cwiseProduct(z);
  }
  for (int i = 0; i < 3; ++i) {
    const double var = acc2[i] / n - std::pow(acc[i] / n, 2);
    CHECK(std::abs(var - 0.25) < 0.05 * 0.25);
  }
}

TEST_CASE("decoder logits are finite and deterministic") {
  Grammar g = tiny_grammar();
  GvaeModel m(g, tiny_config(), 11);
  Eigen::VectorXd z(4);
  z << 0.3, -1.2, 0.7, 2.0;
  Eigen::MatrixXd l1 = m.decode_logits(z);
  CHECK(l1.rows() == 8);
  CHECK(l1.cols() == 8);
  CHECK(l1.allFinite());
  CHECK(l1 == m.decode_logits(z));
  CHECK_THROWS_AS(m.decode_logits(Eigen::VectorXd::Zero(3)), Error);
}

TEST_CASE("masked decoding is always grammatical") {
  Grammar g = tiny_grammar();
  GvaeModel m(g, tiny_config(), 17);  // untrained, arbitrary weights
  for (int i = 0; i < 1000; ++i) {
    Eigen::VectorXd z =
        reparametrize(Eigen::VectorXd::Zero(4),
                      Eigen::VectorXd::Constant(4, 2.0), 5000 + i);
    const DecodeMode mode = i % 2 ? DecodeMode::sample : DecodeMode::argmax;
    RuleSequence seq = decode_sequence(m, z, g, mode, 77 + i);
    CHECK(static_cast<int>(seq.indices.size()) == g.n_max);
    const std::string text = generate(g, seq);
    CHECK(parse(g, text).indices == seq.indices);
  }
}

TEST_CASE("decode modes are reproducible") {
  Grammar g = tiny_grammar();
  GvaeModel m(g, tiny_config(), 19);
  Eigen::VectorXd z = Eigen::VectorXd::Constant(4, 0.4);
  CHECK(decode_sequence(m, z, g, DecodeMode::argmax, 1).indices ==
        decode_sequence(m, z, g, DecodeMode::argmax, 2).indices);
  CHECK(decode_sequence(m, z, g, DecodeMode::sample, 3).indices ==
        decode_sequence(m, z, g, DecodeMode::sample, 3).indices);

  Grammar other = load_grammar("S -> 'a'\n", 8);
  CHECK_THROWS_AS(decode_sequence(m, z, other, DecodeMode::argmax, 0), Error);
}

TEST_CASE("a single legal rule is chosen whatever the logits say") {
  Grammar g = load_grammar("S -> 'a' U\nU -> 'b'\n", 4);
  GvaeConfig cfg = tiny_config();
  cfg.conv_kernels = {2, 2, 2};
  for (std::uint64_t seed : {1, 2, 3}) {
    GvaeModel m(g, cfg, seed);
    for (int i = 0; i < 20; ++i) {
      Eigen::VectorXd z = reparametrize(Eigen::VectorXd::Zero(4),
                                        Eigen::VectorXd::Zero(4), 100 + i);
      RuleSequence seq = decode_sequence(m, z, g, DecodeMode::sample, i);
      CHECK(seq.n_rules == 2);
      CHECK(generate(g, seq) == "a b");
    }
  }
}

TEST_CASE("loss gradient matches finite differences") {
  Grammar g = tiny_grammar();
  GvaeModel m(g, tiny_config(), 42);
  std::vector<OneHotMatrix> batch = tiny_dataset(g, 3, 7);
  Eigen::MatrixXd eps(4, 3);
  auto erng = make_rng(9);
  std::normal_distribution<double> nd;
  for (int b = 0; b < 3; ++b)
    for (int i = 0; i < 4; ++i) eps(i, b) = nd(erng);

  const double beta = 0.01;
  Eigen::VectorXd grad;
  gvae_loss(m, batch, eps, beta, &grad);
  Eigen::VectorXd& th = m.params();
  double worst = 0.0;
  for (int i = 0; i < m.n_params(); ++i) {
    const double save = th[i];
    const double h = 1e-4 * std::max(1.0, std::abs(save));
    th[i] = save + h;
    const double up = gvae_loss(m, batch, eps, beta);
    th[i] = save - h;
    const double dn = gvae_loss(m, batch, eps, beta);
    th[i] = save;
    const double fd = (up - dn) / (2.0 * h);
    worst = std::max(worst, std::abs(fd - grad[i]) /
                                std::max(1e-6, std::max(std::abs(fd),
                                                        std::abs(grad[i]))));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("kl term is nonnegative and vanishes at the prior") {
  Grammar g = tiny_grammar();
  std::vector<OneHotMatrix> batch = tiny_dataset(g, 4, 21);
  const Eigen::MatrixXd eps = Eigen::MatrixXd::Zero(4, 4);
  for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
    GvaeModel m(g, tiny_config(), seed);
    double kl = -1.0;
    gvae_loss(m, batch, eps, 1.0, nullptr, nullptr, &kl);
    CHECK(kl >= 0.0);
  }
  GvaeModel zero(g, tiny_config(), 1);
  zero.params().setZero();  // encoder emits mu = 0, logvar = 0
  double kl = -1.0, bce = -1.0;
  const double total = gvae_loss(zero, batch, eps, 1.0, nullptr, &bce, &kl);
  CHECK(kl == 0.0);
  CHECK(total == bce);
}

TEST_CASE("training reduces the loss and logs every epoch") {
  Grammar g = tiny_grammar();
  std::vector<OneHotMatrix> data = tiny_dataset(g, 100, 13);
  std::vector<OneHotMatrix> train(data.begin(), data.begin() + 90);
  std::vector<OneHotMatrix> val(data.begin() + 90, data.end());
  TrainConfig tc;
  tc.batch = 16;
  tc.max_epochs = 40;
  tc.early_stop = 40;
  tc.plateau_patience = 15;
  tc.min_lr = 1e-4;
  tc.seed = 3;
  TrainResult r = train_gvae(g, tiny_config(), train, val, tc);
  CHECK(!r.aborted_non_finite);
  CHECK(r.log.size() == 40);
  const double init_loss =
      gvae_eval_loss(GvaeModel(g, tiny_config(), mix_seed(tc.seed, 101)),
                     train, tc.beta_kl);
  CHECK(r.log.front().total < init_loss);
  CHECK(r.log.back().total < r.log.front().total);
  CHECK(r.best_epoch >= 1);
  for (size_t i = 1; i < r.log.size(); ++i) {
    CHECK(r.log[i].epoch == r.log[i - 1].epoch + 1);
    CHECK(r.log[i].lr <= r.log[i - 1].lr);
    CHECK(r.log[i].lr >= tc.min_lr);
  }

  // the trained encoder separates inputs
  Eigen::VectorXd mu1, mu2, lv;
  r.model.encode(train[0], mu1, lv);
  r.model.encode(train[1], mu2, lv);
  CHECK((mu1 - mu2).norm() > 0.0);

  const std::string csv = train_log_csv(r.log);
  CHECK(csv.rfind("epoch,bce,kl,total,lr\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 41);
}

TEST_CASE("zero kl weight trains on reconstruction alone") {
  Grammar g = tiny_grammar();
  std::vector<OneHotMatrix> train = tiny_dataset(g, 24, 31);
  TrainConfig tc;
  tc.beta_kl = 0.0;
  tc.batch = 8;
  tc.max_epochs = 3;
  tc.seed = 1;
  TrainResult r = train_gvae(g, tiny_config(), train, {}, tc);
  REQUIRE(r.log.size() == 3);
  for (const EpochLog& e : r.log) {
    CHECK(e.total == e.bce);
    CHECK(e.kl >= 0.0);
  }
}

TEST_CASE("training is deterministic") {
  Grammar g = tiny_grammar();
  std::vector<OneHotMatrix> data = tiny_dataset(g, 40, 17);
  std::vector<OneHotMatrix> train(data.begin(), data.begin() + 32);
  std::vector<OneHotMatrix> val(data.begin() + 32, data.end());
  TrainConfig tc;
  tc.batch = 8;
  tc.max_epochs = 6;
  tc.seed = 11;
  TrainResult a = train_gvae(g, tiny_config(), train, val, tc);
  TrainResult b = train_gvae(g, tiny_config(), train, val, tc);
  CHECK(a.model.params() == b.model.params());
  CHECK(a.best_epoch == b.best_epoch);
  CHECK(a.log.size() == b.log.size());
  for (size_t i = 0; i < a.log.size(); ++i)
    CHECK(a.log[i].total == b.log[i].total);
}

TEST_CASE("a non-finite loss aborts and keeps the last good parameters") {
  Grammar g = tiny_grammar();
  std::vector<OneHotMatrix> train = tiny_dataset(g, 8, 23);
  GvaeModel init(g, tiny_config(), 9);
  init.params().setConstant(1e6);  // exp(logvar) overflows immediately
  const Eigen::VectorXd frozen = init.params();
  TrainConfig tc;
  tc.batch = 8;
  tc.max_epochs = 10;
  TrainResult r = train_gvae(std::move(init), train, {}, tc);
  CHECK(r.aborted_non_finite);
  CHECK(r.log.empty());
  CHECK(r.model.params() == frozen);
}

TEST_CASE("evaluation loss is the deterministic zero-noise loss") {
  Grammar g = tiny_grammar();
  GvaeModel m(g, tiny_config(), 29);
  std::vector<OneHotMatrix> set = tiny_dataset(g, 10, 37);
  double bce = 0.0, kl = 0.0;
  const double a = gvae_eval_loss(m, set, 0.5, &bce, &kl);
  CHECK(a == gvae_eval_loss(m, set, 0.5));
  CHECK(a == doctest::Approx(bce + 0.5 * kl).epsilon(1e-12));
  const double direct =
      gvae_loss(m, set, Eigen::MatrixXd::Zero(4, 10), 0.5);
  CHECK(a == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("checkpoints round trip and reject corruption") {
  Grammar g = tiny_grammar();
  GvaeModel m(g, tiny_config(), 53);
  const std::string blob = m.serialize();
  GvaeModel back = GvaeModel::deserialize(blob);
  CHECK(back.params() == m.params());
  CHECK(back.n_max() == m.n_max());
  CHECK(back.n_rules() == m.n_rules());
  CHECK(back.grammar_hash() == m.grammar_hash());
  Eigen::VectorXd z = Eigen::VectorXd::Constant(4, 0.2);
  CHECK(back.decode_logits(z) == m.decode_logits(z));

  std::string bad = blob;
  bad[0] = 'X';
  CHECK_THROWS_AS(GvaeModel::deserialize(bad), Error);
  CHECK_THROWS_AS(GvaeModel::deserialize(blob.substr(0, 30)), Error);
  std::string wrong_hash = blob;
  wrong_hash[8] ^= 0xff;  // grammar hash byte
  GvaeModel tampered = GvaeModel::deserialize(wrong_hash);
  CHECK_THROWS_AS(decode_sequence(tampered, z, g, DecodeMode::argmax, 0),
                  Error);
}

TEST_SUITE_END();

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "odisc/common.hpp"
#include "odisc/grammar.hpp"

namespace odisc {

// Architecture knobs. Latent dimension, kernel sizes and recurrent
// hidden width follow the benchmark configs; convolution channel
// counts are free choices.
struct GvaeConfig {
  int d_z = 16;
  int hidden = 48;
  std::array<int, 3> conv_channels{32, 32, 32};
  std::array<int, 3> conv_kernels{7, 8, 9};
};

// Variational autoencoder over padded one-hot rule matrices.
//
// Encoder: the n_max x |rules| one-hot matrix is treated as a length
// n_max signal with |rules| channels and pushed through three valid
// convolutions with ReLU, then flattened into dense maps to the mean
// and log variance of q(z|X).
//
// Decoder: z is projected into the initial hidden state of every
// (layer, direction) pair of a three-layer bidirectional GRU stack
// and is also the input at every timestep of the first layer. The
// GRU candidate activation is ELU; the two directions are summed
// before feeding the next layer and before the per-timestep dense
// logit head. There is no teacher forcing: logits depend on z alone.
//
// All parameters live in one flat vector (layout in gvae.cpp), all
// math is double precision. Inference methods are const and safe to
// call concurrently on a shared model.
class GvaeModel {
 public:
  GvaeModel() = default;
  GvaeModel(const Grammar& g, const GvaeConfig& cfg, std::uint64_t seed);

  int n_max() const { return n_max_; }
  int n_rules() const { return n_rules_; }
  int d_z() const { return cfg_.d_z; }
  const GvaeConfig& config() const { return cfg_; }
  std::uint64_t grammar_hash() const { return grammar_hash_; }

  int n_params() const { return static_cast<int>(theta_.size()); }
  Eigen::VectorXd& params() { return theta_; }
  const Eigen::VectorXd& params() const { return theta_; }

  // Deterministic forward passes.
  void encode(const OneHotMatrix& x, Eigen::VectorXd& mean,
              Eigen::VectorXd& logvar) const;
  Eigen::MatrixXd decode_logits(const Eigen::VectorXd& z) const;

  std::string serialize() const;
  static GvaeModel deserialize(const std::string& blob);

 private:
  friend struct GvaeWork;
  GvaeConfig cfg_;
  int n_max_ = 0;
  int n_rules_ = 0;
  std::uint64_t grammar_hash_ = 0;
  Eigen::VectorXd theta_;
};

// z = mean + exp(logvar / 2) * eps with eps ~ N(0, I) drawn from seed.
Eigen::VectorXd reparametrize(const Eigen::VectorXd& mean,
                              const Eigen::VectorXd& logvar,
                              std::uint64_t seed);

enum class DecodeMode { argmax, sample };

// Walks the decoder logits left to right with a leftmost-derivation
// stack, restricting each step to rules that are grammatical for the
// pending nonterminal and closable within the remaining budget, so
// the result is always a valid padded sequence. In sample mode rules
// are drawn from the masked softmax; argmax mode is deterministic.
// If no rule fits the budget (possible only when the start symbol
// itself cannot close within n_max), the grammatical rule with the
// smallest stack growth wins, ties to the lowest index.
RuleSequence decode_sequence(const GvaeModel& m, const Eigen::VectorXd& z,
                             const Grammar& g, DecodeMode mode,
                             std::uint64_t seed = 0);

struct TrainConfig {
  double beta_kl = 1e-3;
  double lr = 1e-3;
  double plateau_factor = 0.9;
  int plateau_patience = 400;
  double min_lr = 5e-5;
  int early_stop = 1000;  // epochs without improvement before stopping
  int max_epochs = 5000;
  int batch = 32;
  std::uint64_t seed = 0;
};

struct EpochLog {
  int epoch = 0;  // 1-based
  double bce = 0.0;
  double kl = 0.0;
  double total = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  GvaeModel model;  // best parameters seen, not the last ones
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_monitored = 0.0;
  bool aborted_non_finite = false;
};

// Minimizes mean over the batch of BCE-with-logits(X_hat, X) summed
// over matrix entries plus beta_kl times KL(q(z|X) || N(0, I)), with
// Adam, a reduce-on-plateau schedule and early stopping. When val is
// nonempty the plateau/stopping monitor is the validation loss at
// z = mean, otherwise the training epoch mean. A non-finite loss
// aborts training and the best checkpoint so far is returned.
TrainResult train_gvae(const Grammar& g, const GvaeConfig& mcfg,
                       const std::vector<OneHotMatrix>& train,
                       const std::vector<OneHotMatrix>& val,
                       const TrainConfig& cfg);

// Same, continuing from explicit initial parameters.
TrainResult train_gvae(GvaeModel init, const std::vector<OneHotMatrix>& train,
                       const std::vector<OneHotMatrix>& val,
                       const TrainConfig& cfg);

// Loss of one explicit batch with per-sample noise eps (d_z x batch);
// fills the parameter gradient when grad is non-null. Exposed for
// gradient checks.
double gvae_loss(const GvaeModel& m, const std::vector<OneHotMatrix>& batch,
                 const Eigen::MatrixXd& eps, double beta_kl,
                 Eigen::VectorXd* grad = nullptr, double* bce_out = nullptr,
                 double* kl_out = nullptr);

// Deterministic evaluation loss (z = mean, no sampling).
double gvae_eval_loss(const GvaeModel& m, const std::vector<OneHotMatrix>& set,
                      double beta_kl, double* bce_out = nullptr,
                      double* kl_out = nullptr);

// Fraction of sequences reproduced exactly by encode -> mean ->
// masked argmax decode.
double reconstruction_rate(const GvaeModel& m, const Grammar& g,
                           const std::vector<OneHotMatrix>& set);

std::string train_log_csv(const std::vector<EpochLog>& log);

}  // namespace odisc

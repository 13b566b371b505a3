#include "odisc/gvae.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include "nn_util.hpp"

namespace odisc {

using detail::Adam;
using detail::put;
using detail::take;

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}
double elu(double x) { return x > 0.0 ? x : std::expm1(x); }

// Shapes derived from grammar size and config. Channel/time axes:
// ct[i], tt[i] are the input channels and time length of conv layer i,
// so ct[0] = |rules| and tt[0] = n_max; F is the flattened size.
struct Dims {
  int R = 0, T = 0, dz = 0, H = 0;
  std::array<int, 3> c{}, k{};
  std::array<int, 4> ct{}, tt{};
  int F = 0;

  int in_dim(int layer) const { return layer == 0 ? dz : H; }
};

Dims make_dims(int n_rules, int n_max, const GvaeConfig& cfg) {
  Dims d;
  d.R = n_rules;
  d.T = n_max;
  d.dz = cfg.d_z;
  d.H = cfg.hidden;
  d.c = cfg.conv_channels;
  d.k = cfg.conv_kernels;
  if (d.R < 1 || d.T < 1 || d.dz < 1 || d.H < 1)
    throw Error(Error::Code::config, "gvae dimensions must be positive");
  d.ct = {d.R, d.c[0], d.c[1], d.c[2]};
  d.tt[0] = d.T;
  for (int i = 0; i < 3; ++i) {
    if (d.c[i] < 1 || d.k[i] < 1)
      throw Error(Error::Code::config, "gvae conv shape must be positive");
    d.tt[i + 1] = d.tt[i] - d.k[i] + 1;
    if (d.tt[i + 1] < 1)
      throw Error(Error::Code::config,
                  "conv kernels leave no time steps at n_max " +
                      std::to_string(d.T));
  }
  d.F = d.c[2] * d.tt[3];
  return d;
}

// Offsets into the flat parameter vector, in checkpoint block order.
struct Layout {
  struct Block {
    int off, n, fan;
  };
  int conv_w[3], conv_b[3];
  int w_mu, b_mu, w_lv, b_lv;
  int w0[3][2], b0[3][2], wx[3][2], bx[3][2], wh[3][2], bh[3][2];
  int w_y, b_y;
  int total = 0;
  std::vector<Block> blocks;
};

Layout make_layout(const Dims& d) {
  Layout L;
  int p = 0;
  auto blk = [&](int n, int fan) {
    L.blocks.push_back({p, n, fan});
    p += n;
    return p - n;
  };
  for (int i = 0; i < 3; ++i) {
    const int fan = d.ct[i] * d.k[i];
    L.conv_w[i] = blk(d.c[i] * fan, fan);
    L.conv_b[i] = blk(d.c[i], fan);
  }
  L.w_mu = blk(d.dz * d.F, d.F);
  L.b_mu = blk(d.dz, d.F);
  L.w_lv = blk(d.dz * d.F, d.F);
  L.b_lv = blk(d.dz, d.F);
  for (int l = 0; l < 3; ++l)
    for (int dir = 0; dir < 2; ++dir) {
      const int in = d.in_dim(l);
      L.w0[l][dir] = blk(d.H * d.dz, d.dz);
      L.b0[l][dir] = blk(d.H, d.dz);
      L.wx[l][dir] = blk(3 * d.H * in, in);
      L.bx[l][dir] = blk(3 * d.H, in);
      L.wh[l][dir] = blk(3 * d.H * d.H, d.H);
      L.bh[l][dir] = blk(3 * d.H, d.H);
    }
  L.w_y = blk(d.R * d.H, d.H);
  L.b_y = blk(d.R, d.H);
  L.total = p;
  return L;
}

Eigen::Map<const Mat> cmat(const Vec& th, int off, int r, int c) {
  return {th.data() + off, r, c};
}
Eigen::Map<Mat> mmat(Vec& th, int off, int r, int c) {
  return {th.data() + off, r, c};
}
Eigen::Map<const Vec> cvec(const Vec& th, int off, int n) {
  return {th.data() + off, n};
}
Eigen::Map<Vec> mvec(Vec& th, int off, int n) {
  return {th.data() + off, n};
}

// Batched activations. All sequence matrices are time major: column
// t * B + b holds sample b at step t (processing order s for the
// per-direction recurrent caches).
struct EncCache {
  Mat in;  // R x T*B, one-hot target and conv input
  std::array<Mat, 3> col, pre, act;
  Mat f, mu, lv;
};

struct DirCache {
  Mat in_s;  // reversed input copy, backward direction of layers > 0
  Mat gi0;   // input gate preactivation of layer 0, constant over t
  Mat h;     // H x (T+1)*B, block s = state entering step s
  Mat r, u, a, c, ghn;
};

struct DecCache {
  Mat z;
  DirCache d[3][2];
  Mat y[3];  // direction sums, layer outputs
  Mat logits;
};

void encoder_forward(const Vec& th, const Layout& L, const Dims& D, int B,
                     EncCache& ec) {
  const Mat* prev = &ec.in;
  for (int i = 0; i < 3; ++i) {
    const int cin = D.ct[i], cout = D.c[i], k = D.k[i], tout = D.tt[i + 1];
    ec.col[i].resize(cin * k, tout * B);
    for (int j = 0; j < k; ++j)
      for (int t = 0; t < tout; ++t)
        ec.col[i].block(j * cin, t * B, cin, B) =
            prev->middleCols((t + j) * B, B);
    ec.pre[i].resize(cout, tout * B);
    ec.pre[i].noalias() = cmat(th, L.conv_w[i], cout, cin * k) * ec.col[i];
    ec.pre[i].colwise() += cvec(th, L.conv_b[i], cout);
    ec.act[i] = ec.pre[i].cwiseMax(0.0);
    prev = &ec.act[i];
  }
  ec.f.resize(D.F, B);
  for (int t = 0; t < D.tt[3]; ++t)
    ec.f.middleRows(t * D.c[2], D.c[2]) = ec.act[2].middleCols(t * B, B);
  ec.mu.resize(D.dz, B);
  ec.mu.noalias() = cmat(th, L.w_mu, D.dz, D.F) * ec.f;
  ec.mu.colwise() += cvec(th, L.b_mu, D.dz);
  ec.lv.resize(D.dz, B);
  ec.lv.noalias() = cmat(th, L.w_lv, D.dz, D.F) * ec.f;
  ec.lv.colwise() += cvec(th, L.b_lv, D.dz);
}

void decoder_forward(const Vec& th, const Layout& L, const Dims& D, int B,
                     DecCache& dc) {
  const int H = D.H, T = D.T;
  Mat gh(3 * H, B), gi_all;
  for (int l = 0; l < 3; ++l) {
    dc.y[l].setZero(H, T * B);
    for (int dir = 0; dir < 2; ++dir) {
      DirCache& c = dc.d[l][dir];
      const int in = D.in_dim(l);
      c.h.resize(H, (T + 1) * B);
      c.h.leftCols(B).noalias() = cmat(th, L.w0[l][dir], H, D.dz) * dc.z;
      c.h.leftCols(B).colwise() += cvec(th, L.b0[l][dir], H);
      const Mat* in_mat = nullptr;
      if (l == 0) {
        c.gi0.resize(3 * H, B);
        c.gi0.noalias() = cmat(th, L.wx[l][dir], 3 * H, in) * dc.z;
        c.gi0.colwise() += cvec(th, L.bx[l][dir], 3 * H);
      } else {
        if (dir == 0) {
          in_mat = &dc.y[l - 1];
        } else {
          c.in_s.resize(H, T * B);
          for (int s = 0; s < T; ++s)
            c.in_s.middleCols(s * B, B) =
                dc.y[l - 1].middleCols((T - 1 - s) * B, B);
          in_mat = &c.in_s;
        }
        gi_all.resize(3 * H, T * B);
        gi_all.noalias() = cmat(th, L.wx[l][dir], 3 * H, in) * (*in_mat);
        gi_all.colwise() += cvec(th, L.bx[l][dir], 3 * H);
      }
      c.r.resize(H, T * B);
      c.u.resize(H, T * B);
      c.a.resize(H, T * B);
      c.c.resize(H, T * B);
      c.ghn.resize(H, T * B);
      const auto Wh = cmat(th, L.wh[l][dir], 3 * H, H);
      const auto bh = cvec(th, L.bh[l][dir], 3 * H);
      for (int s = 0; s < T; ++s) {
        const auto hp = c.h.middleCols(s * B, B);
        gh.noalias() = Wh * hp;
        gh.colwise() += bh;
        const Eigen::Ref<const Mat> gi =
            l == 0 ? Eigen::Ref<const Mat>(c.gi0)
                   : Eigen::Ref<const Mat>(gi_all.middleCols(s * B, B));
        auto R_ = c.r.middleCols(s * B, B);
        auto U_ = c.u.middleCols(s * B, B);
        auto A_ = c.a.middleCols(s * B, B);
        auto C_ = c.c.middleCols(s * B, B);
        auto N_ = c.ghn.middleCols(s * B, B);
        N_ = gh.middleRows(2 * H, H);
        R_.array() = (gi.middleRows(0, H) + gh.middleRows(0, H))
                         .array()
                         .unaryExpr([](double x) { return sigmoid(x); });
        U_.array() = (gi.middleRows(H, H) + gh.middleRows(H, H))
                         .array()
                         .unaryExpr([](double x) { return sigmoid(x); });
        A_.array() = gi.middleRows(2 * H, H).array() + R_.array() * N_.array();
        C_.array() = A_.array().unaryExpr([](double x) { return elu(x); });
        c.h.middleCols((s + 1) * B, B).array() =
            (1.0 - U_.array()) * C_.array() + U_.array() * hp.array();
        const int t = dir == 0 ? s : T - 1 - s;
        dc.y[l].middleCols(t * B, B) += c.h.middleCols((s + 1) * B, B);
      }
    }
  }
  dc.logits.resize(D.R, T * B);
  dc.logits.noalias() = cmat(th, L.w_y, D.R, H) * dc.y[2];
  dc.logits.colwise() += cvec(th, L.b_y, D.R);
}

double loss_packed(const Vec& th, const Layout& L, const Dims& D, int B,
                   EncCache& ec, DecCache& dc, const Mat& eps, double beta,
                   Vec* grad, double* bce_out, double* kl_out) {
  const int H = D.H, T = D.T;
  encoder_forward(th, L, D, B, ec);
  dc.z = ec.mu.array() + (0.5 * ec.lv.array()).exp() * eps.array();
  decoder_forward(th, L, D, B, dc);

  const double bce =
      (dc.logits.array().unaryExpr([](double x) { return softplus(x); }) -
       ec.in.array() * dc.logits.array())
          .sum() /
      B;
  const double kl = 0.5 *
                    (ec.mu.array().square() + ec.lv.array().exp() -
                     ec.lv.array() - 1.0)
                        .sum() /
                    B;
  if (bce_out) *bce_out = bce;
  if (kl_out) *kl_out = kl;
  const double total = bce + beta * kl;
  if (!grad) return total;

  Vec& g = *grad;
  g.setZero(L.total);

  Mat glogits =
      ((dc.logits.array().unaryExpr([](double x) { return sigmoid(x); }) -
        ec.in.array()) /
       B)
          .matrix();
  mmat(g, L.w_y, D.R, H).noalias() += glogits * dc.y[2].transpose();
  mvec(g, L.b_y, D.R) += glogits.rowwise().sum();
  Mat gy = cmat(th, L.w_y, D.R, H).transpose() * glogits;

  Mat gz = Mat::Zero(D.dz, B);
  Mat ghtot(H, B), gu(H, B), gcand(H, B), ga(H, B), gr(H, B), gsr(H, B),
      gsu(H, B), carry(H, B);
  for (int l = 2; l >= 0; --l) {
    Mat gy_prev;
    if (l > 0) gy_prev.setZero(H, T * B);
    for (int dir = 0; dir < 2; ++dir) {
      DirCache& c = dc.d[l][dir];
      const int in = D.in_dim(l);
      Mat gGH(3 * H, T * B);
      Mat gGI, S;
      if (l == 0)
        S.setZero(3 * H, B);
      else
        gGI.resize(3 * H, T * B);
      carry.setZero();
      const auto WhT = cmat(th, L.wh[l][dir], 3 * H, H).transpose();
      for (int s = T - 1; s >= 0; --s) {
        const int t = dir == 0 ? s : T - 1 - s;
        const auto hp = c.h.middleCols(s * B, B);
        const auto R_ = c.r.middleCols(s * B, B);
        const auto U_ = c.u.middleCols(s * B, B);
        const auto A_ = c.a.middleCols(s * B, B);
        const auto C_ = c.c.middleCols(s * B, B);
        const auto N_ = c.ghn.middleCols(s * B, B);
        ghtot = carry + gy.middleCols(t * B, B);
        gu.array() = ghtot.array() * (hp.array() - C_.array());
        gcand.array() = ghtot.array() * (1.0 - U_.array());
        ga.array() =
            gcand.array() *
            A_.array().binaryExpr(C_.array(), [](double a, double cc) {
              return a > 0.0 ? 1.0 : cc + 1.0;
            });
        gr.array() = ga.array() * N_.array();
        gsr.array() = gr.array() * R_.array() * (1.0 - R_.array());
        gsu.array() = gu.array() * U_.array() * (1.0 - U_.array());
        auto GH = gGH.middleCols(s * B, B);
        GH.middleRows(0, H) = gsr;
        GH.middleRows(H, H) = gsu;
        GH.middleRows(2 * H, H).array() = ga.array() * R_.array();
        if (l == 0) {
          S.middleRows(0, H) += gsr;
          S.middleRows(H, H) += gsu;
          S.middleRows(2 * H, H) += ga;
        } else {
          auto GI = gGI.middleCols(s * B, B);
          GI.middleRows(0, H) = gsr;
          GI.middleRows(H, H) = gsu;
          GI.middleRows(2 * H, H) = ga;
        }
        carry.array() = ghtot.array() * U_.array();
        carry.noalias() += WhT * GH;
      }
      mmat(g, L.w0[l][dir], H, D.dz).noalias() += carry * dc.z.transpose();
      mvec(g, L.b0[l][dir], H) += carry.rowwise().sum();
      gz.noalias() += cmat(th, L.w0[l][dir], H, D.dz).transpose() * carry;
      mmat(g, L.wh[l][dir], 3 * H, H).noalias() +=
          gGH * c.h.leftCols(T * B).transpose();
      mvec(g, L.bh[l][dir], 3 * H) += gGH.rowwise().sum();
      if (l == 0) {
        mmat(g, L.wx[l][dir], 3 * H, in).noalias() += S * dc.z.transpose();
        mvec(g, L.bx[l][dir], 3 * H) += S.rowwise().sum();
        gz.noalias() += cmat(th, L.wx[l][dir], 3 * H, in).transpose() * S;
      } else {
        const Mat* in_mat = dir == 0 ? &dc.y[l - 1] : &c.in_s;
        mmat(g, L.wx[l][dir], 3 * H, in).noalias() +=
            gGI * in_mat->transpose();
        mvec(g, L.bx[l][dir], 3 * H) += gGI.rowwise().sum();
        Mat gin = cmat(th, L.wx[l][dir], 3 * H, in).transpose() * gGI;
        if (dir == 0)
          gy_prev += gin;
        else
          for (int s = 0; s < T; ++s)
            gy_prev.middleCols((T - 1 - s) * B, B) +=
                gin.middleCols(s * B, B);
      }
    }
    if (l > 0) gy = std::move(gy_prev);
  }

  Mat gmu = gz;
  Mat glv = (0.5 * gz.array() * (dc.z - ec.mu).array()).matrix();
  gmu.array() += (beta / B) * ec.mu.array();
  glv.array() += (beta / B) * 0.5 * (ec.lv.array().exp() - 1.0);

  mmat(g, L.w_mu, D.dz, D.F).noalias() += gmu * ec.f.transpose();
  mvec(g, L.b_mu, D.dz) += gmu.rowwise().sum();
  mmat(g, L.w_lv, D.dz, D.F).noalias() += glv * ec.f.transpose();
  mvec(g, L.b_lv, D.dz) += glv.rowwise().sum();
  Mat gf = cmat(th, L.w_mu, D.dz, D.F).transpose() * gmu;
  gf.noalias() += cmat(th, L.w_lv, D.dz, D.F).transpose() * glv;

  Mat gact(D.c[2], D.tt[3] * B);
  for (int t = 0; t < D.tt[3]; ++t)
    gact.middleCols(t * B, B) = gf.middleRows(t * D.c[2], D.c[2]);
  for (int i = 2; i >= 0; --i) {
    const int cin = D.ct[i], cout = D.c[i], k = D.k[i], tout = D.tt[i + 1];
    Mat gpre =
        (gact.array() * (ec.pre[i].array() > 0.0).cast<double>()).matrix();
    mmat(g, L.conv_w[i], cout, cin * k).noalias() +=
        gpre * ec.col[i].transpose();
    mvec(g, L.conv_b[i], cout) += gpre.rowwise().sum();
    if (i > 0) {
      Mat gcol = cmat(th, L.conv_w[i], cout, cin * k).transpose() * gpre;
      gact = Mat::Zero(cin, D.tt[i] * B);
      for (int j = 0; j < k; ++j)
        for (int t = 0; t < tout; ++t)
          gact.middleCols((t + j) * B, B) +=
              gcol.block(j * cin, t * B, cin, B);
    }
  }
  return total;
}

// Column t*B + b of the packed target is row t of sample b.
void pack_batch(const std::vector<OneHotMatrix>& set,
                const std::vector<int>& order, int first, int B, int R, int T,
                Mat& in) {
  in.resize(R, T * B);
  for (int b = 0; b < B; ++b) {
    const OneHotMatrix& x = set[order[first + b]];
    for (int t = 0; t < T; ++t) in.col(t * B + b) = x.row(t).transpose();
  }
}

void check_set(const std::vector<OneHotMatrix>& set, int T, int R,
               const char* what) {
  for (const OneHotMatrix& x : set)
    if (x.rows() != T || x.cols() != R)
      throw Error(Error::Code::data,
                  std::string(what) + " one-hot shape must be n_max x |rules|");
}

}  // namespace

GvaeModel::GvaeModel(const Grammar& g, const GvaeConfig& cfg,
                     std::uint64_t seed)
    : cfg_(cfg),
      n_max_(g.n_max),
      n_rules_(g.total_rules()),
      grammar_hash_(g.hash()) {
  const Dims D = make_dims(n_rules_, n_max_, cfg_);
  const Layout L = make_layout(D);
  theta_.resize(L.total);
  auto rng = make_rng(seed);
  for (const Layout::Block& b : L.blocks) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(b.fan));
    std::uniform_real_distribution<double> ud(-bound, bound);
    for (int i = 0; i < b.n; ++i) theta_[b.off + i] = ud(rng);
  }
}

void GvaeModel::encode(const OneHotMatrix& x, Eigen::VectorXd& mean,
                       Eigen::VectorXd& logvar) const {
  const Dims D = make_dims(n_rules_, n_max_, cfg_);
  const Layout L = make_layout(D);
  if (x.rows() != n_max_ || x.cols() != n_rules_)
    throw Error(Error::Code::data, "one-hot shape must be n_max x |rules|");
  EncCache ec;
  ec.in = x.transpose();
  encoder_forward(theta_, L, D, 1, ec);
  mean = ec.mu.col(0);
  logvar = ec.lv.col(0);
}

Eigen::MatrixXd GvaeModel::decode_logits(const Eigen::VectorXd& z) const {
  const Dims D = make_dims(n_rules_, n_max_, cfg_);
  const Layout L = make_layout(D);
  if (z.size() != cfg_.d_z)
    throw Error(Error::Code::data, "latent dimension mismatch");
  DecCache dc;
  dc.z = z;
  decoder_forward(theta_, L, D, 1, dc);
  return dc.logits.transpose();
}

std::string GvaeModel::serialize() const {
  std::string out;
  out.append("ODGV", 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, grammar_hash_);
  put<std::int32_t>(out, n_max_);
  put<std::int32_t>(out, n_rules_);
  put<std::int32_t>(out, cfg_.d_z);
  put<std::int32_t>(out, cfg_.hidden);
  for (int i = 0; i < 3; ++i) put<std::int32_t>(out, cfg_.conv_channels[i]);
  for (int i = 0; i < 3; ++i) put<std::int32_t>(out, cfg_.conv_kernels[i]);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(theta_.size()));
  for (Eigen::Index i = 0; i < theta_.size(); ++i) put<double>(out, theta_[i]);
  return out;
}

GvaeModel GvaeModel::deserialize(const std::string& blob) {
  if (blob.size() < 4 || blob.compare(0, 4, "ODGV") != 0)
    throw Error(Error::Code::checkpoint, "not a gvae checkpoint");
  size_t pos = 4;
  if (take<std::uint32_t>(blob, pos) != kCheckpointVersion)
    throw Error(Error::Code::checkpoint, "unsupported checkpoint version");
  GvaeModel m;
  m.grammar_hash_ = take<std::uint64_t>(blob, pos);
  m.n_max_ = take<std::int32_t>(blob, pos);
  m.n_rules_ = take<std::int32_t>(blob, pos);
  m.cfg_.d_z = take<std::int32_t>(blob, pos);
  m.cfg_.hidden = take<std::int32_t>(blob, pos);
  for (int i = 0; i < 3; ++i)
    m.cfg_.conv_channels[i] = take<std::int32_t>(blob, pos);
  for (int i = 0; i < 3; ++i)
    m.cfg_.conv_kernels[i] = take<std::int32_t>(blob, pos);
  const Dims D = make_dims(m.n_rules_, m.n_max_, m.cfg_);
  const Layout L = make_layout(D);
  const auto count = take<std::uint64_t>(blob, pos);
  if (count != static_cast<std::uint64_t>(L.total))
    throw Error(Error::Code::checkpoint, "parameter count mismatch");
  m.theta_.resize(L.total);
  for (int i = 0; i < L.total; ++i) m.theta_[i] = take<double>(blob, pos);
  return m;
}

Eigen::VectorXd reparametrize(const Eigen::VectorXd& mean,
                              const Eigen::VectorXd& logvar,
                              std::uint64_t seed) {
  if (mean.size() != logvar.size())
    throw Error(Error::Code::data, "mean and logvar sizes differ");
  auto rng = make_rng(seed);
  std::normal_distribution<double> nd;
  Eigen::VectorXd z(mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i)
    z[i] = mean[i] + std::exp(0.5 * logvar[i]) * nd(rng);
  return z;
}

RuleSequence decode_sequence(const GvaeModel& m, const Eigen::VectorXd& z,
                             const Grammar& g, DecodeMode mode,
                             std::uint64_t seed) {
  if (g.hash() != m.grammar_hash())
    throw Error(Error::Code::config, "model was built for a different grammar");
  const Eigen::MatrixXd logits = m.decode_logits(z);
  const int T = m.n_max();
  DerivationState st(g);
  auto rng = make_rng(seed);
  std::vector<int> indices;
  indices.reserve(T);
  int n_rules = 0;
  for (int t = 0; t < T; ++t) {
    int chosen;
    if (st.done()) {
      chosen = g.padding_index;
    } else {
      const std::vector<int>& cand = g.rules_for(*st.top());
      std::vector<int> feas;
      feas.reserve(cand.size());
      for (int idx : cand)
        if (st.feasible(idx, T - t)) feas.push_back(idx);
      if (feas.empty()) {
        // Reachable only if the start symbol cannot close within n_max.
        int best_growth = std::numeric_limits<int>::max();
        chosen = cand.front();
        for (int idx : cand) {
          int growth = 0;
          for (const Symbol& s : g.rule(idx).rhs)
            if (!s.terminal) growth += g.min_close(s.id);
          if (growth < best_growth) {
            best_growth = growth;
            chosen = idx;
          }
        }
      } else if (mode == DecodeMode::argmax || feas.size() == 1) {
        chosen = feas.front();
        double best = logits(t, chosen - 1);
        for (int idx : feas)
          if (logits(t, idx - 1) > best) {
            best = logits(t, idx - 1);
            chosen = idx;
          }
      } else {
        double top = logits(t, feas.front() - 1);
        for (int idx : feas) top = std::max(top, logits(t, idx - 1));
        double sum = 0.0;
        std::vector<double> w(feas.size());
        for (size_t i = 0; i < feas.size(); ++i) {
          w[i] = std::exp(logits(t, feas[i] - 1) - top);
          sum += w[i];
        }
        double draw =
            std::uniform_real_distribution<double>(0.0, sum)(rng);
        chosen = feas.back();
        for (size_t i = 0; i < feas.size(); ++i) {
          if (draw < w[i]) {
            chosen = feas[i];
            break;
          }
          draw -= w[i];
        }
      }
      ++n_rules;
    }
    st.apply(chosen);
    indices.push_back(chosen);
  }
  RuleSequence seq;
  seq.indices = std::move(indices);
  seq.n_rules = n_rules;
  return seq;
}

double gvae_loss(const GvaeModel& m, const std::vector<OneHotMatrix>& batch,
                 const Eigen::MatrixXd& eps, double beta_kl,
                 Eigen::VectorXd* grad, double* bce_out, double* kl_out) {
  if (batch.empty()) throw Error(Error::Code::data, "empty batch");
  check_set(batch, m.n_max(), m.n_rules(), "batch");
  const int B = static_cast<int>(batch.size());
  if (eps.rows() != m.d_z() || eps.cols() != B)
    throw Error(Error::Code::data, "eps shape must be d_z x batch");
  const Dims D = make_dims(m.n_rules(), m.n_max(), m.config());
  const Layout L = make_layout(D);
  EncCache ec;
  DecCache dc;
  std::vector<int> order(B);
  std::iota(order.begin(), order.end(), 0);
  pack_batch(batch, order, 0, B, D.R, D.T, ec.in);
  return loss_packed(m.params(), L, D, B, ec, dc, eps, beta_kl, grad, bce_out,
                     kl_out);
}

double gvae_eval_loss(const GvaeModel& m, const std::vector<OneHotMatrix>& set,
                      double beta_kl, double* bce_out, double* kl_out) {
  if (set.empty()) throw Error(Error::Code::data, "empty evaluation set");
  check_set(set, m.n_max(), m.n_rules(), "evaluation");
  const Dims D = make_dims(m.n_rules(), m.n_max(), m.config());
  const Layout L = make_layout(D);
  const int N = static_cast<int>(set.size());
  std::vector<int> order(N);
  std::iota(order.begin(), order.end(), 0);
  EncCache ec;
  DecCache dc;
  double tot = 0.0, bce = 0.0, kl = 0.0;
  for (int first = 0; first < N; first += 64) {
    const int B = std::min(64, N - first);
    pack_batch(set, order, first, B, D.R, D.T, ec.in);
    const Mat eps = Mat::Zero(D.dz, B);
    double bb = 0.0, kk = 0.0;
    const double t = loss_packed(m.params(), L, D, B, ec, dc, eps, beta_kl,
                                 nullptr, &bb, &kk);
    tot += t * B;
    bce += bb * B;
    kl += kk * B;
  }
  if (bce_out) *bce_out = bce / N;
  if (kl_out) *kl_out = kl / N;
  return tot / N;
}

double reconstruction_rate(const GvaeModel& m, const Grammar& g,
                           const std::vector<OneHotMatrix>& set) {
  if (set.empty()) throw Error(Error::Code::data, "empty evaluation set");
  int hits = 0;
  Eigen::VectorXd mean, logvar;
  for (const OneHotMatrix& x : set) {
    m.encode(x, mean, logvar);
    const RuleSequence got =
        decode_sequence(m, mean, g, DecodeMode::argmax, 0);
    if (got.indices == decode_one_hot(g, x).indices) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(set.size());
}

TrainResult train_gvae(GvaeModel init, const std::vector<OneHotMatrix>& train,
                       const std::vector<OneHotMatrix>& val,
                       const TrainConfig& cfg) {
  if (train.empty()) throw Error(Error::Code::data, "empty training set");
  if (cfg.batch < 1 || cfg.max_epochs < 1 || cfg.lr <= 0.0 ||
      cfg.beta_kl < 0.0)
    throw Error(Error::Code::config, "invalid training config");
  check_set(train, init.n_max(), init.n_rules(), "training");
  check_set(val, init.n_max(), init.n_rules(), "validation");

  TrainResult res;
  res.model = std::move(init);
  const Dims D = make_dims(res.model.n_rules(), res.model.n_max(),
                           res.model.config());
  const Layout L = make_layout(D);
  Adam adam(L.total);
  Vec grad(L.total);
  double lr = cfg.lr;
  double best = std::numeric_limits<double>::infinity();
  Vec best_theta = res.model.params();
  int plateau_bad = 0, stop_bad = 0;
  const int N = static_cast<int>(train.size());
  std::vector<int> order(N);
  std::iota(order.begin(), order.end(), 0);
  std::map<int, std::pair<EncCache, DecCache>> works;
  std::normal_distribution<double> nd;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    auto shuffle_rng = make_rng(cfg.seed, 7, static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    auto eps_rng = make_rng(cfg.seed, 8, static_cast<std::uint64_t>(epoch));
    double ebce = 0.0, ekl = 0.0, etot = 0.0;
    for (int first = 0; first < N && !res.aborted_non_finite;
         first += cfg.batch) {
      const int B = std::min(cfg.batch, N - first);
      auto& [ec, dc] = works[B];
      pack_batch(train, order, first, B, D.R, D.T, ec.in);
      Mat eps(D.dz, B);
      for (int b = 0; b < B; ++b)
        for (int i = 0; i < D.dz; ++i) eps(i, b) = nd(eps_rng);
      double bb = 0.0, kk = 0.0;
      const double tot = loss_packed(res.model.params(), L, D, B, ec, dc, eps,
                                     cfg.beta_kl, &grad, &bb, &kk);
      if (!std::isfinite(tot)) {
        res.aborted_non_finite = true;
        break;
      }
      adam.step(res.model.params(), grad, lr);
      ebce += bb * B;
      ekl += kk * B;
      etot += tot * B;
    }
    if (res.aborted_non_finite) break;
    ebce /= N;
    ekl /= N;
    etot /= N;
    const double monitored =
        val.empty() ? etot : gvae_eval_loss(res.model, val, cfg.beta_kl);
    if (!std::isfinite(monitored)) {
      res.aborted_non_finite = true;
      break;
    }
    res.log.push_back({epoch, ebce, ekl, etot, lr});
    if (monitored < best) {
      best = monitored;
      best_theta = res.model.params();
      res.best_epoch = epoch;
      plateau_bad = 0;
      stop_bad = 0;
    } else {
      ++plateau_bad;
      ++stop_bad;
    }
    if (plateau_bad >= cfg.plateau_patience && lr > cfg.min_lr) {
      lr = std::max(lr * cfg.plateau_factor, cfg.min_lr);
      plateau_bad = 0;
    }
    if (stop_bad >= cfg.early_stop) break;
  }
  res.model.params() = best_theta;
  res.best_monitored = best;
  return res;
}

TrainResult train_gvae(const Grammar& g, const GvaeConfig& mcfg,
                       const std::vector<OneHotMatrix>& train,
                       const std::vector<OneHotMatrix>& val,
                       const TrainConfig& cfg) {
  return train_gvae(GvaeModel(g, mcfg, mix_seed(cfg.seed, 101)), train, val,
                    cfg);
}

std::string train_log_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,bce,kl,total,lr\n";
  for (const EpochLog& e : log) {
    out += std::to_string(e.epoch);
    out += ',';
    out += format_double(e.bce, 10);
    out += ',';
    out += format_double(e.kl, 10);
    out += ',';
    out += format_double(e.total, 10);
    out += ',';
    out += format_double(e.lr, 10);
    out += '\n';
  }
  return out;
}

}  // namespace odisc

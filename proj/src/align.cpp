#include "dpfuse/align.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "dpfuse/error.hpp"
#include "dpfuse/io.hpp"
#include "dpfuse/nn.hpp"
#include "dpfuse/rng.hpp"

namespace dpfuse {
namespace {

// Mean of the k largest entries of v (k <= v.size()).
double top_k_mean(std::vector<double>& v, std::size_t k) {
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k - 1), v.end(),
                   std::greater<>());
  double s = 0;
  for (std::size_t i = 0; i < k; ++i) s += v[i];
  return s / static_cast<double>(k);
}

// Eigenvectors of the covariance as columns, descending eigenvalue, each
// oriented so the third moment of the projections is non-negative.
Matrix oriented_axes(const Matrix& x) {
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Matrix c = x.rowwise() - mean;
  const Matrix cov = (c.transpose() * c) / static_cast<double>(std::max<Eigen::Index>(1, x.rows()));
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  const Matrix vecs = eig.eigenvectors().rowwise().reverse();
  Matrix axes(vecs.rows(), vecs.cols());
  const Matrix proj = c * vecs;
  for (Eigen::Index j = 0; j < vecs.cols(); ++j) {
    const double skew = proj.col(j).array().cube().mean();
    axes.col(j) = skew < 0 ? Vector(-vecs.col(j)) : Vector(vecs.col(j));
  }
  return axes;
}

class Discriminator {
 public:
  Discriminator(std::size_t dim, std::size_t hidden, double slope, Rng& rng)
      : w1_(uniform_init(static_cast<Eigen::Index>(hidden), static_cast<Eigen::Index>(dim), rng)),
        b1_(Vector::Zero(static_cast<Eigen::Index>(hidden))),
        w2_(uniform_init(1, static_cast<Eigen::Index>(hidden), rng).row(0).transpose()),
        b2_(0.0),
        slope_(slope) {}

  /// Mean BCE-with-logits of rows `x` against `labels`. Writes dL/dx and, when
  /// `update` is set, applies one SGD step with rate lr to the discriminator.
  double step(const Matrix& x, const Vector& labels, Matrix* dx, bool update, double lr) {
    const Matrix pre = (x * w1_.transpose()).rowwise() + b1_.transpose();
    const Matrix h = pre.unaryExpr([s = slope_](double v) { return v > 0 ? v : s * v; });
    const Vector logits = (h * w2_).array() + b2_;
    const double n = static_cast<double>(x.rows());
    double loss = 0;
    Vector dlogit(logits.size());
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
      const double z = logits(i), y = labels(i);
      loss -= y * log_sigmoid(z) + (1.0 - y) * log_sigmoid(-z);
      dlogit(i) = (sigmoid(z) - y) / n;
    }
    Matrix dh = dlogit * w2_.transpose();
    Matrix dpre = dh.array() * pre.unaryExpr([s = slope_](double v) { return v > 0 ? 1.0 : s; }).array();
    if (dx) *dx = dpre * w1_;
    if (update) {
      const Vector gw2 = h.transpose() * dlogit;
      const double gb2 = dlogit.sum();
      const Matrix gw1 = dpre.transpose() * x;
      const Vector gb1 = dpre.colwise().sum().transpose();
      w2_ -= lr * gw2;
      b2_ -= lr * gb2;
      w1_ -= lr * gw1;
      b1_ -= lr * gb1;
    }
    return loss / n;
  }

 private:
  Matrix w1_;
  Vector b1_;
  Vector w2_;
  double b2_;
  double slope_;
};

Matrix gather_rows(const Matrix& m, const std::vector<Eigen::Index>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
  return out;
}

}  // namespace

void GanConfig::validate() const {
  if (hidden == 0 || epochs == 0 || batch == 0 || discriminator_steps == 0 || csls_k == 0)
    throw usage_error("GAN sizes must be positive");
  if (!(lr_generator > 0.0) || !(lr_discriminator > 0.0))
    throw usage_error("GAN learning rates must be positive");
  if (!(beta >= 0.0 && beta <= 0.01))
    throw usage_error("orthogonalization strength beta must lie in [0, 0.01]");
}

void AnchorSet::validate() const {
  std::unordered_set<std::string> src, tgt;
  for (const auto& p : pairs) {
    if (!src.insert(p.source).second)
      throw validation_error("anchor set: source '" + p.source + "' appears twice");
    if (!tgt.insert(p.target).second)
      throw validation_error("anchor set: target '" + p.target + "' appears twice");
  }
}

Matrix normalize_rows(const Matrix& m) {
  Matrix out = m;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n > 0) out.row(i) /= n;
  }
  return out;
}

double orthogonality_error(const Matrix& w) {
  return (w.transpose() * w - Matrix::Identity(w.cols(), w.cols())).norm();
}

void orthogonalize_step(Matrix& w, double beta) {
  w = (1.0 + beta) * w - beta * (w * w.transpose()) * w;
}

Matrix moment_match_init(const Matrix& source, const Matrix& target) {
  if (source.cols() != target.cols())
    throw validation_error("moment init: dimension mismatch");
  return oriented_axes(target) * oriented_axes(source).transpose();
}

Matrix csls(const Matrix& mapped_source, const Matrix& target, std::size_t k) {
  if (mapped_source.cols() != target.cols())
    throw validation_error("CSLS: dimension mismatch");
  const auto ns = static_cast<std::size_t>(mapped_source.rows());
  const auto nt = static_cast<std::size_t>(target.rows());
  if (k == 0 || k > nt || k > ns)
    throw usage_error("CSLS: k must lie in [1, min(|S|, |T|)]");
  const Matrix cos = normalize_rows(mapped_source) * normalize_rows(target).transpose();
  Vector r_t(static_cast<Eigen::Index>(ns)), r_s(static_cast<Eigen::Index>(nt));
  std::vector<double> buf;
  for (std::size_t i = 0; i < ns; ++i) {
    const auto row = cos.row(static_cast<Eigen::Index>(i));
    buf.resize(nt);
    for (std::size_t j = 0; j < nt; ++j) buf[j] = row(static_cast<Eigen::Index>(j));
    r_t(static_cast<Eigen::Index>(i)) = top_k_mean(buf, k);
  }
  for (std::size_t j = 0; j < nt; ++j) {
    buf.resize(ns);
    for (std::size_t i = 0; i < ns; ++i)
      buf[i] = cos(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    r_s(static_cast<Eigen::Index>(j)) = top_k_mean(buf, k);
  }
  Matrix out = 2.0 * cos;
  out.colwise() -= r_t;
  out.rowwise() -= r_s.transpose();
  return out;
}

double alignment_criterion(const Matrix& mapped_source, const Matrix& target, std::size_t k) {
  const Matrix scores = csls(mapped_source, target, k);
  const Matrix s = normalize_rows(mapped_source);
  const Matrix t = normalize_rows(target);
  double total = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index best;
    scores.row(i).maxCoeff(&best);
    total += s.row(i).dot(t.row(best));
  }
  return total / static_cast<double>(scores.rows());
}

AlignmentModel train_mapping(const EmbeddingTable& z1, const EmbeddingTable& z2,
                             const GanConfig& cfg, GanTrace* trace) {
  cfg.validate();
  if (z1.empty() || z2.empty()) throw validation_error("alignment needs non-empty tables");
  if (z1.dim() != z2.dim())
    throw validation_error("alignment: dimension mismatch (" + std::to_string(z1.dim()) +
                           " vs " + std::to_string(z2.dim()) + ")");
  const Matrix src = normalize_rows(z1.vectors());
  const Matrix tgt = normalize_rows(z2.vectors());
  const auto d = static_cast<Eigen::Index>(z1.dim());
  const std::size_t k = std::min({cfg.csls_k, z1.size(), z2.size()});

  Rng rng = Rng::substream(cfg.seed, StreamTag::kAlign);
  AlignmentModel model{cfg.moment_init ? moment_match_init(src, tgt)
                                       : Matrix(Matrix::Identity(d, d))};
  Discriminator disc(z1.dim(), cfg.hidden, cfg.leaky_slope, rng);
  GanTrace local;
  GanTrace& tr = trace ? *trace : local;
  tr = GanTrace{};

  Matrix best = model.w;
  double best_score = alignment_criterion(src * model.w.transpose(), tgt, k);
  tr.criterion.push_back(best_score);

  const std::size_t b = cfg.batch;
  const std::size_t iters = std::max<std::size_t>(1, (z1.size() + b - 1) / b);
  Vector d_labels(static_cast<Eigen::Index>(2 * b));
  d_labels.head(static_cast<Eigen::Index>(b)).setZero();
  d_labels.tail(static_cast<Eigen::Index>(b)).setOnes();
  const Vector g_labels = Vector::Ones(static_cast<Eigen::Index>(b));
  std::vector<Eigen::Index> si(b), ti(b);
  Matrix x(static_cast<Eigen::Index>(2 * b), d), dx;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double d_sum = 0, g_sum = 0;
    for (std::size_t it = 0; it < iters; ++it) {
      for (std::size_t s = 0; s < cfg.discriminator_steps; ++s) {
        for (std::size_t i = 0; i < b; ++i) {
          si[i] = static_cast<Eigen::Index>(rng.index(z1.size()));
          ti[i] = static_cast<Eigen::Index>(rng.index(z2.size()));
        }
        x.topRows(static_cast<Eigen::Index>(b)) = gather_rows(src, si) * model.w.transpose();
        x.bottomRows(static_cast<Eigen::Index>(b)) = gather_rows(tgt, ti);
        const double loss = disc.step(x, d_labels, nullptr, true, cfg.lr_discriminator);
        if (!std::isfinite(loss))
          throw numeric_error("discriminator loss is not finite in epoch " + std::to_string(epoch));
        d_sum += loss;
      }
      for (std::size_t i = 0; i < b; ++i)
        si[i] = static_cast<Eigen::Index>(rng.index(z1.size()));
      const Matrix xs = gather_rows(src, si);
      const double g_loss =
          disc.step(xs * model.w.transpose(), g_labels, &dx, false, 0.0);
      g_sum += g_loss;
      model.w -= cfg.lr_generator * (dx.transpose() * xs);
      const double before = orthogonality_error(model.w);
      orthogonalize_step(model.w, cfg.beta);
      ++tr.orthogonalization_steps;
      if (orthogonality_error(model.w) > before + 1e-12) ++tr.orthogonalization_increases;
      if (!model.w.allFinite())
        throw numeric_error("mapping became non-finite in epoch " + std::to_string(epoch));
    }
    tr.discriminator_loss.push_back(d_sum / static_cast<double>(iters * cfg.discriminator_steps));
    tr.generator_loss.push_back(g_sum / static_cast<double>(iters));
    const double score = alignment_criterion(src * model.w.transpose(), tgt, k);
    tr.criterion.push_back(score);
    if (score > best_score) {
      best_score = score;
      best = model.w;
      tr.best_epoch = epoch + 1;
    }
  }
  if (cfg.select_best) model.w = best;
  return model;
}

AnchorSet predict_anchors(const EmbeddingTable& z1, const EmbeddingTable& z2,
                          const AlignmentModel& model, std::size_t k, double margin) {
  if (z1.dim() != z2.dim() || static_cast<std::size_t>(model.w.cols()) != z1.dim())
    throw validation_error("anchor prediction: dimension mismatch");
  AnchorSet out;
  if (z1.empty() || z2.empty() || margin == std::numeric_limits<double>::infinity())
    return out;
  const Matrix mapped = normalize_rows(z1.vectors()) * model.w.transpose();
  const Matrix scores =
      csls(mapped, normalize_rows(z2.vectors()), std::min({k, z1.size(), z2.size()}));
  std::vector<Eigen::Index> row_best(static_cast<std::size_t>(scores.rows()));
  std::vector<Eigen::Index> col_best(static_cast<std::size_t>(scores.cols()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i)
    scores.row(i).maxCoeff(&row_best[static_cast<std::size_t>(i)]);
  for (Eigen::Index j = 0; j < scores.cols(); ++j)
    scores.col(j).maxCoeff(&col_best[static_cast<std::size_t>(j)]);
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const Eigen::Index j = row_best[static_cast<std::size_t>(i)];
    if (col_best[static_cast<std::size_t>(j)] != i) continue;
    const double s = scores(i, j);
    if (s > margin)
      out.pairs.push_back({z1.ids()[static_cast<std::size_t>(i)],
                           z2.ids()[static_cast<std::size_t>(j)], s});
  }
  return out;
}

void save_anchors(const std::filesystem::path& path, const AnchorSet& anchors,
                  const nlohmann::json& provenance) {
  write_file_atomic(path, [&](std::ostream& out) {
    if (!provenance.is_null()) out << "# " << provenance.dump() << '\n';
    for (const auto& p : anchors.pairs)
      out << p.source << ' ' << p.target << ' ' << format_double(p.score) << '\n';
  });
}

AnchorSet load_anchors(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open anchor file " + path.string());
  AnchorSet set;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    AnchorPair p;
    std::string score;
    if (!(ss >> p.source >> p.target)) {
      throw validation_error(path.string() + ":" + std::to_string(lineno) +
                             ": expected 'src_id tgt_id score'");
    }
    if (ss >> score) {
      char* end = nullptr;
      p.score = std::strtod(score.c_str(), &end);
      if (end != score.c_str() + score.size())
        throw validation_error(path.string() + ":" + std::to_string(lineno) + ": bad score");
    }
    set.pairs.push_back(std::move(p));
  }
  set.validate();
  return set;
}

}  // namespace dpfuse

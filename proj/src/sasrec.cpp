#include "sasrec.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <optional>
#include <type_traits>
#include <unordered_set>

namespace mmsrarec::retriever {

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Index = Eigen::Index;

constexpr double kLayerNormEps = 1e-6;

// Parameter layout, in order:
//   item embeddings (items + 1) x d, row 0 = padding
//   positional embeddings max_len x d
//   per block: ln1 gain, ln1 bias, Wq, Wk, Wv, Wo, ln2 gain, ln2 bias,
//              W1, b1, W2, b2
//   final layer norm gain, bias
template <typename P>
struct Views {
  static constexpr bool kConst = std::is_const_v<P>;
  using M = Eigen::Map<std::conditional_t<kConst, const Mat, Mat>>;
  using V = Eigen::Map<std::conditional_t<kConst, const Vec, Vec>>;
  struct Block {
    V ln1_g, ln1_b;
    M wq, wk, wv, wo;
    V ln2_g, ln2_b;
    M w1;
    V b1;
    M w2;
    V b2;
  };
  M item;
  M pos;
  std::vector<Block> blocks;
  V lnf_g, lnf_b;
};

template <typename P>
Views<P> make_views(P* base, const EncoderConfig& c, std::size_t num_items) {
  using W = Views<P>;
  P* p = base;
  auto mat = [&](Index rows, Index cols) {
    typename W::M m(p, rows, cols);
    p += rows * cols;
    return m;
  };
  auto vec = [&](Index n) {
    typename W::V v(p, n);
    p += n;
    return v;
  };
  const auto d = static_cast<Index>(c.embed_dim);
  auto item = mat(static_cast<Index>(num_items) + 1, d);
  auto pos = mat(static_cast<Index>(c.max_len), d);
  std::vector<typename W::Block> blocks;
  blocks.reserve(c.blocks);
  for (std::size_t l = 0; l < c.blocks; ++l) {
    blocks.push_back(typename W::Block{vec(d), vec(d), mat(d, d), mat(d, d), mat(d, d),
                                       mat(d, d), vec(d), vec(d), mat(d, d), vec(d),
                                       mat(d, d), vec(d)});
  }
  auto g = vec(d);
  auto b = vec(d);
  return W{item, pos, std::move(blocks), g, b};
}

struct LnCache {
  Mat xhat;
  Vec rstd;
};

template <typename G, typename B>
Mat ln_forward(const Mat& x, const G& gain, const B& bias, LnCache& c) {
  const Index m = x.rows();
  c.xhat.resize(m, x.cols());
  c.rstd.resize(m);
  for (Index r = 0; r < m; ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    c.rstd(r) = 1.0 / std::sqrt(var + kLayerNormEps);
    c.xhat.row(r) = (x.row(r).array() - mu) * c.rstd(r);
  }
  Mat y = c.xhat;
  y.array().rowwise() *= gain.transpose().array();
  y.array().rowwise() += bias.transpose().array();
  return y;
}

template <typename G, typename DG>
Mat ln_backward(const Mat& dy, const LnCache& c, const G& gain, DG& dgain, DG& dbias) {
  dgain += dy.cwiseProduct(c.xhat).colwise().sum().transpose();
  dbias += dy.colwise().sum().transpose();
  Mat dxhat = dy;
  dxhat.array().rowwise() *= gain.transpose().array();
  Mat dx(dy.rows(), dy.cols());
  for (Index r = 0; r < dy.rows(); ++r) {
    const double mean1 = dxhat.row(r).mean();
    const double mean2 = dxhat.row(r).cwiseProduct(c.xhat.row(r)).mean();
    dx.row(r) = c.rstd(r) *
                (dxhat.row(r).array() - mean1 - c.xhat.row(r).array() * mean2).matrix();
  }
  return dx;
}

Mat dropout_mask(Index rows, Index cols, double p, Rng& rng) {
  Mat mask(rows, cols);
  const double keep = 1.0 / (1.0 - p);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) mask(i, j) = rng.uniform01() < p ? 0.0 : keep;
  return mask;
}

struct BlockCache {
  LnCache ln1, ln2;
  Mat a, q, k, v, o, mask1, bnorm, f1, r, mask2;
  std::vector<Mat> probs;
};

struct SeqCache {
  int offset = 0;
  bool dropout = false;
  Mat mask0;
  std::vector<BlockCache> blocks;
  LnCache lnf;
};

double softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

template <typename P>
Mat forward(const Views<P>& w, const EncoderConfig& cfg, const std::vector<int>& items,
            double dropout, Rng* rng, SeqCache& c) {
  const auto m = static_cast<Index>(items.size());
  const auto d = static_cast<Index>(cfg.embed_dim);
  const auto heads = static_cast<Index>(cfg.heads);
  const Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  c.offset = static_cast<int>(cfg.max_len) - static_cast<int>(m);
  c.dropout = dropout > 0.0 && rng != nullptr;

  Mat x(m, d);
  for (Index t = 0; t < m; ++t) {
    x.row(t) = w.item.row(items[static_cast<std::size_t>(t)]) + w.pos.row(c.offset + t);
  }
  if (c.dropout) {
    c.mask0 = dropout_mask(m, d, dropout, *rng);
    x = x.cwiseProduct(c.mask0);
  }

  c.blocks.resize(w.blocks.size());
  for (std::size_t l = 0; l < w.blocks.size(); ++l) {
    const auto& bw = w.blocks[l];
    auto& bc = c.blocks[l];
    bc.a = ln_forward(x, bw.ln1_g, bw.ln1_b, bc.ln1);
    bc.q = bc.a * bw.wq;
    bc.k = bc.a * bw.wk;
    bc.v = bc.a * bw.wv;
    bc.o = Mat::Zero(m, d);
    bc.probs.resize(static_cast<std::size_t>(heads));
    for (Index h = 0; h < heads; ++h) {
      Mat s = bc.q.middleCols(h * dh, dh) * bc.k.middleCols(h * dh, dh).transpose() * scale;
      Mat& p = bc.probs[static_cast<std::size_t>(h)];
      p = Mat::Zero(m, m);
      for (Index t = 0; t < m; ++t) {
        const double mx = s.row(t).head(t + 1).maxCoeff();
        double z = 0.0;
        for (Index j = 0; j <= t; ++j) z += (p(t, j) = std::exp(s(t, j) - mx));
        p.row(t).head(t + 1) /= z;
      }
      bc.o.middleCols(h * dh, dh) = p * bc.v.middleCols(h * dh, dh);
    }
    Mat att = bc.o * bw.wo;
    if (c.dropout) {
      bc.mask1 = dropout_mask(m, d, dropout, *rng);
      att = att.cwiseProduct(bc.mask1);
    }
    Mat h = x + att;

    bc.bnorm = ln_forward(h, bw.ln2_g, bw.ln2_b, bc.ln2);
    bc.f1 = bc.bnorm * bw.w1;
    bc.f1.rowwise() += bw.b1.transpose();
    bc.r = bc.f1.cwiseMax(0.0);
    Mat f2 = bc.r * bw.w2;
    f2.rowwise() += bw.b2.transpose();
    if (c.dropout) {
      bc.mask2 = dropout_mask(m, d, dropout, *rng);
      f2 = f2.cwiseProduct(bc.mask2);
    }
    x = h + f2;
  }
  return ln_forward(x, w.lnf_g, w.lnf_b, c.lnf);
}

template <typename P, typename GP>
void backward(const Views<P>& w, Views<GP>& g, const EncoderConfig& cfg,
              const std::vector<int>& items, const SeqCache& c, const Mat& dz) {
  const auto m = static_cast<Index>(items.size());
  const auto d = static_cast<Index>(cfg.embed_dim);
  const auto heads = static_cast<Index>(cfg.heads);
  const Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat dy = ln_backward(dz, c.lnf, w.lnf_g, g.lnf_g, g.lnf_b);
  for (std::size_t li = w.blocks.size(); li-- > 0;) {
    const auto& bw = w.blocks[li];
    auto& bg = g.blocks[li];
    const auto& bc = c.blocks[li];

    Mat df2 = c.dropout ? Mat(dy.cwiseProduct(bc.mask2)) : dy;
    bg.w2 += bc.r.transpose() * df2;
    bg.b2 += df2.colwise().sum().transpose();
    Mat df1 = (df2 * bw.w2.transpose()).cwiseProduct(
        (bc.f1.array() > 0.0).cast<double>().matrix());
    bg.w1 += bc.bnorm.transpose() * df1;
    bg.b1 += df1.colwise().sum().transpose();
    Mat dh_total = dy + ln_backward(Mat(df1 * bw.w1.transpose()), bc.ln2, bw.ln2_g,
                                    bg.ln2_g, bg.ln2_b);

    Mat datt = c.dropout ? Mat(dh_total.cwiseProduct(bc.mask1)) : dh_total;
    bg.wo += bc.o.transpose() * datt;
    Mat dout = datt * bw.wo.transpose();
    Mat dq = Mat::Zero(m, d), dk = Mat::Zero(m, d), dv = Mat::Zero(m, d);
    for (Index h = 0; h < heads; ++h) {
      const Mat& p = bc.probs[static_cast<std::size_t>(h)];
      Mat doh = dout.middleCols(h * dh, dh);
      dv.middleCols(h * dh, dh) = p.transpose() * doh;
      Mat dp = doh * bc.v.middleCols(h * dh, dh).transpose();
      Vec rowdot = dp.cwiseProduct(p).rowwise().sum();
      Mat ds = p.cwiseProduct(dp.colwise() - rowdot);
      dq.middleCols(h * dh, dh) = ds * bc.k.middleCols(h * dh, dh) * scale;
      dk.middleCols(h * dh, dh) = ds.transpose() * bc.q.middleCols(h * dh, dh) * scale;
    }
    bg.wq += bc.a.transpose() * dq;
    bg.wk += bc.a.transpose() * dk;
    bg.wv += bc.a.transpose() * dv;
    Mat da = dq * bw.wq.transpose() + dk * bw.wk.transpose() + dv * bw.wv.transpose();
    dy = dh_total + ln_backward(da, bc.ln1, bw.ln1_g, bg.ln1_g, bg.ln1_b);
  }
  if (c.dropout) dy = dy.cwiseProduct(c.mask0);
  for (Index t = 0; t < m; ++t) {
    g.item.row(items[static_cast<std::size_t>(t)]) += dy.row(t);
    g.pos.row(c.offset + t) += dy.row(t);
  }
}

}  // namespace

std::size_t sasrec_parameter_count(const EncoderConfig& c, std::size_t num_items) {
  const std::size_t d = c.embed_dim;
  const std::size_t per_block = 2 * d + 4 * d * d + 2 * d + d * d + d + d * d + d;
  return (num_items + 1) * d + c.max_len * d + c.blocks * per_block + 2 * d;
}

SasRecModel::SasRecModel(EncoderConfig config, std::vector<std::string> item_ids,
                         std::uint64_t seed)
    : config_(std::move(config)), item_ids_(std::move(item_ids)) {
  if (config_.heads == 0 || config_.embed_dim % config_.heads != 0) {
    throw invalid_argument("embed_dim must be divisible by heads");
  }
  for (std::size_t i = 0; i < item_ids_.size(); ++i) {
    index_.emplace(item_ids_[i], static_cast<int>(i) + 1);
  }
  theta_.assign(sasrec_parameter_count(config_, item_ids_.size()), 0.0);
  auto w = make_views(theta_.data(), config_, item_ids_.size());
  Rng rng(seed);
  const double d = static_cast<double>(config_.embed_dim);
  const double emb_std = 1.0 / std::sqrt(d);
  const double xavier = std::sqrt(1.0 / d);
  for (Index i = 1; i < w.item.rows(); ++i)
    for (Index j = 0; j < w.item.cols(); ++j) w.item(i, j) = rng.normal(0.0, emb_std);
  for (Index i = 0; i < w.pos.rows(); ++i)
    for (Index j = 0; j < w.pos.cols(); ++j) w.pos(i, j) = rng.normal(0.0, emb_std);
  auto init = [&](auto& m) {
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) m(i, j) = rng.normal(0.0, xavier);
  };
  for (auto& b : w.blocks) {
    b.ln1_g.setOnes();
    b.ln2_g.setOnes();
    init(b.wq);
    init(b.wk);
    init(b.wv);
    init(b.wo);
    init(b.w1);
    init(b.w2);
  }
  w.lnf_g.setOnes();
}

int SasRecModel::index_of(const std::string& item_id) const {
  auto it = index_.find(item_id);
  return it == index_.end() ? 0 : it->second;
}

std::vector<double> SasRecModel::encode(const std::vector<int>& items) const {
  std::vector<int> seq;
  for (int i : items)
    if (i > 0) seq.push_back(i);
  if (seq.size() > config_.max_len) {
    seq.erase(seq.begin(), seq.end() - static_cast<std::ptrdiff_t>(config_.max_len));
  }
  std::vector<double> out(config_.embed_dim, 0.0);
  if (seq.empty()) return out;
  const auto w = make_views(theta_.data(), config_, item_ids_.size());
  SeqCache cache;
  const Mat z = forward(w, config_, seq, 0.0, nullptr, cache);
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = z(z.rows() - 1, static_cast<Index>(j));
  return out;
}

double SasRecModel::loss_and_grad(const std::vector<TrainingExample>& batch, double dropout,
                                  std::uint64_t dropout_seed,
                                  std::vector<double>* grad) const {
  const auto w = make_views(theta_.data(), config_, item_ids_.size());
  std::size_t positions = 0;
  for (const auto& ex : batch) positions += ex.inputs.size();
  if (positions == 0) return 0.0;
  const double inv = 1.0 / static_cast<double>(positions);

  std::optional<Views<double>> g;
  if (grad) {
    grad->resize(theta_.size(), 0.0);
    g.emplace(make_views(grad->data(), config_, item_ids_.size()));
  }
  Rng rng(dropout_seed);
  double loss = 0.0;
  for (const auto& ex : batch) {
    if (ex.inputs.empty()) continue;
    SeqCache cache;
    const Mat z = forward(w, config_, ex.inputs, dropout, dropout > 0.0 ? &rng : nullptr, cache);
    Mat dz = Mat::Zero(z.rows(), z.cols());
    for (Index t = 0; t < z.rows(); ++t) {
      const auto tu = static_cast<std::size_t>(t);
      const double pos = z.row(t).dot(w.item.row(ex.targets[tu]));
      const double neg = z.row(t).dot(w.item.row(ex.negatives[tu]));
      loss += (softplus(-pos) + softplus(neg)) * inv;
      if (g) {
        const double dpos = (sigmoid(pos) - 1.0) * inv;
        const double dneg = sigmoid(neg) * inv;
        dz.row(t) = dpos * w.item.row(ex.targets[tu]) + dneg * w.item.row(ex.negatives[tu]);
        g->item.row(ex.targets[tu]) += dpos * z.row(t);
        g->item.row(ex.negatives[tu]) += dneg * z.row(t);
      }
    }
    if (g) backward(w, *g, config_, ex.inputs, cache, dz);
  }
  return loss;
}

std::string SasRecModel::version() const {
  std::uint64_t h = fnv1a64(header().dump());
  h = fnv1a64(std::string_view(reinterpret_cast<const char*>(theta_.data()),
                               theta_.size() * sizeof(double)),
              h);
  return "sasrec:" + hex64(h);
}

json SasRecModel::header() const {
  return json{{"format", "mmsrarec-sasrec"},
              {"format_version", 1},
              {"config", config_.to_json()},
              {"item_ids", item_ids_},
              {"parameter_count", theta_.size()}};
}

SasRecModel SasRecModel::from_parts(const json& header, std::vector<double> theta) {
  if (header.value("format", "") != "mmsrarec-sasrec" || header.value("format_version", 0) != 1) {
    throw Error(ErrorCode::kParse, "not a sequence-encoder checkpoint");
  }
  SasRecModel model(EncoderConfig::from_json(header.at("config")),
                    header.at("item_ids").get<std::vector<std::string>>(), 0);
  if (theta.size() != model.theta_.size()) {
    throw Error(ErrorCode::kParse, "checkpoint parameter count mismatch");
  }
  model.theta_ = std::move(theta);
  return model;
}

// ---------------------------------------------------------------------------

SasRecEncoder::SasRecEncoder(std::shared_ptr<const SasRecModel> model)
    : model_(std::move(model)), version_(model_->version()) {}

UserEmbedding SasRecEncoder::encode(const std::string& user_id,
                                    const std::vector<std::string>& history) const {
  std::vector<int> items;
  for (const auto& id : history) items.push_back(model_->index_of(id));
  return {user_id, model_->encode(items), version_};
}

std::string SasRecEncoder::version() const { return version_; }

std::size_t SasRecEncoder::dimension() const { return model_->config().embed_dim; }

std::vector<double> SasRecEncoder::next_item_scores(
    const std::vector<std::string>& history) const {
  std::vector<int> items;
  for (const auto& id : history) items.push_back(model_->index_of(id));
  const auto z = model_->encode(items);
  const auto& cfg = model_->config();
  const auto w = make_views(model_->parameters().data(), cfg, model_->num_items());
  const Eigen::Map<const Vec> zv(z.data(), static_cast<Index>(z.size()));
  std::vector<double> scores(model_->num_items());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] = w.item.row(static_cast<Index>(i) + 1).dot(zv.transpose());
  }
  return scores;
}

std::string SasRecEncoder::predict_next(const std::vector<std::string>& history) const {
  const auto scores = next_item_scores(history);
  if (scores.empty()) return {};
  std::vector<bool> seen(scores.size(), false);
  bool any = false;
  for (const auto& id : history) {
    const int i = model_->index_of(id);
    if (i <= 0) continue;
    seen[static_cast<std::size_t>(i - 1)] = true;
    any = true;
  }
  if (!any) return {};
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!seen[i] && (!best || scores[i] > scores[*best])) best = i;
  }
  return best ? model_->item_ids()[*best] : std::string();
}

void SasRecEncoder::save(const std::filesystem::path& path) const {
  std::string blob = model_->header().dump();
  blob += '\n';
  const auto& theta = model_->parameters();
  blob.append(reinterpret_cast<const char*>(theta.data()), theta.size() * sizeof(double));
  write_file(path, blob);
}

SasRecEncoder SasRecEncoder::load(const std::filesystem::path& path) {
  const std::string blob = read_file(path);
  const auto nl = blob.find('\n');
  if (nl == std::string::npos) throw Error(ErrorCode::kParse, "truncated encoder checkpoint");
  json header;
  try {
    header = json::parse(blob.substr(0, nl));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("bad encoder checkpoint header: ") + e.what());
  }
  const std::size_t bytes = blob.size() - nl - 1;
  if (bytes % sizeof(double) != 0) throw Error(ErrorCode::kParse, "truncated encoder checkpoint");
  std::vector<double> theta(bytes / sizeof(double));
  std::memcpy(theta.data(), blob.data() + nl + 1, bytes);
  return SasRecEncoder(
      std::make_shared<const SasRecModel>(SasRecModel::from_parts(header, std::move(theta))));
}

// ---------------------------------------------------------------------------

namespace {

int sample_negative(Rng& rng, int num_items, const std::unordered_set<int>& exclude) {
  int neg = 1;
  for (int tries = 0; tries < 100; ++tries) {
    neg = 1 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(num_items)));
    if (!exclude.count(neg)) break;
  }
  return neg;
}

struct Sequence {
  std::vector<int> items;
  std::unordered_set<int> members;
};

TrainingExample make_example(const Sequence& s, Rng& rng, int num_items) {
  TrainingExample ex;
  ex.inputs.assign(s.items.begin(), s.items.end() - 1);
  ex.targets.assign(s.items.begin() + 1, s.items.end());
  for (std::size_t t = 0; t < ex.inputs.size(); ++t) {
    ex.negatives.push_back(sample_negative(rng, num_items, s.members));
  }
  return ex;
}

}  // namespace

TrainedEncoder train_sequence_encoder(const std::vector<std::vector<std::string>>& sequences,
                                      const corpus::ItemCatalog& catalog,
                                      const EncoderConfig& config, std::uint64_t seed) {
  if (catalog.size() < 2) throw invalid_argument("encoder training needs at least 2 items");
  std::vector<std::string> ids;
  for (const auto& item : catalog) ids.push_back(item.item_id);
  auto model = std::make_shared<SasRecModel>(config, ids, derive_seed(seed, {"init"}));
  const int num_items = static_cast<int>(ids.size());

  std::vector<Sequence> data;
  for (const auto& seq : sequences) {
    Sequence s;
    for (const auto& id : seq) {
      const int i = model->index_of(id);
      if (i > 0) s.items.push_back(i);
    }
    if (s.items.size() > config.max_len + 1) {
      s.items.erase(s.items.begin(),
                    s.items.end() - static_cast<std::ptrdiff_t>(config.max_len + 1));
    }
    if (s.items.size() < 2) continue;
    s.members.insert(s.items.begin(), s.items.end());
    data.push_back(std::move(s));
  }
  if (data.empty()) throw invalid_argument("empty training set for the sequence encoder");

  Rng eval_rng(derive_seed(seed, {"eval"}));
  std::vector<TrainingExample> eval;
  for (const auto& s : data) eval.push_back(make_example(s, eval_rng, num_items));

  TrainedEncoder out;
  out.initial_loss = model->loss_and_grad(eval, 0.0, 0, nullptr);

  auto& theta = model->parameters();
  std::vector<double> m1(theta.size(), 0.0), m2(theta.size(), 0.0), grad;
  constexpr double kBeta1 = 0.9, kBeta2 = 0.98, kAdamEps = 1e-8;
  std::size_t step = 0;
  Rng rng(derive_seed(seed, {"train"}));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch_size = std::max<std::size_t>(1, config.batch_size);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t epoch_positions = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      std::vector<TrainingExample> batch;
      std::size_t positions = 0;
      for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i) {
        batch.push_back(make_example(data[order[i]], rng, num_items));
        positions += batch.back().inputs.size();
      }
      grad.assign(theta.size(), 0.0);
      const double loss = model->loss_and_grad(batch, config.dropout, rng.next_u64(), &grad);
      epoch_loss += loss * static_cast<double>(positions);
      epoch_positions += positions;

      ++step;
      const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      for (std::size_t p = 0; p < theta.size(); ++p) {
        m1[p] = kBeta1 * m1[p] + (1.0 - kBeta1) * grad[p];
        m2[p] = kBeta2 * m2[p] + (1.0 - kBeta2) * grad[p] * grad[p];
        theta[p] -= config.learning_rate * (m1[p] / c1) / (std::sqrt(m2[p] / c2) + kAdamEps);
      }
    }
    out.loss_curve.push_back(epoch_loss / static_cast<double>(std::max<std::size_t>(1, epoch_positions)));
  }
  out.final_loss = model->loss_and_grad(eval, 0.0, 0, nullptr);
  out.encoder = std::make_shared<SasRecEncoder>(model);
  return out;
}

}  // namespace mmsrarec::retriever

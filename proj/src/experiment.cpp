#include "fvnce/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "fvnce/checkpoint.hpp"
#include "fvnce/optim.hpp"
#include "fvnce/rng.hpp"

namespace fvnce::cli {

namespace {

// Stream keys under Rng(seed).
constexpr std::uint64_t kDataStream = 0xda7a;
constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kEvalStream = 0xe7a1;
constexpr std::uint64_t kTrainStream = 0x7a19;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void ensure_dir(const std::string& dir) {
  if (!dir.empty()) std::filesystem::create_directories(dir);
}

std::string join(const std::string& dir, const std::string& file) {
  return (std::filesystem::path(dir) / file).string();
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  return os;
}

Matrix gather_rows(const Matrix& m, const std::vector<Index>& idx, Index from, Index count) {
  Matrix out(count, m.cols());
  for (Index i = 0; i < count; ++i) out.row(i) = m.row(idx[static_cast<std::size_t>(from + i)]);
  return out;
}

struct ChunkResult {
  double value = 0.0;
  Vector grad;
  losses::Diagnostics diag;
};

// Runs fn(c) for c in [0, n) on up to `threads` workers. Each chunk writes
// only its own slot, so the later reduction order is fixed.
template <class Fn>
void parallel_chunks(Index n, int threads, Fn&& fn) {
  const int workers = static_cast<int>(std::min<Index>(std::max(threads, 1), n));
  if (workers <= 1) {
    for (Index c = 0; c < n; ++c) fn(c);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (Index c = w; c < n; c += workers) fn(c);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string sanitize(std::string s) {
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') c = '_';
  }
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration.

void RunConfig::validate() const {
  auto positive = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("config: ") + what);
  };
  positive(latent_dim > 0, "latent_dim must be positive");
  for (Index h : hidden) positive(h > 0, "hidden sizes must be positive");
  positive(sigma_dec > 0.0, "sigma_dec must be positive");
  positive(sigma_kde >= 0.0, "sigma_kde must be >= 0");
  positive(epochs >= 0, "epochs must be >= 0");
  positive(batch_size > 0, "batch_size must be positive");
  positive(chunk_rows > 0, "chunk_rows must be positive");
  positive(eval_rows > 0, "eval_rows must be positive");
  positive(lr > 0.0, "lr must be positive");
  positive(threads >= 1, "threads must be >= 1");
  positive(mix_weight > 0.0 && mix_weight <= 1.0, "mix_weight must lie in (0, 1]");
  positive(mc_samples >= 1, "mc_samples must be >= 1");
  positive(clip_threshold > 0.0, "clip_threshold must be positive");
  positive(dataset.train > 0, "dataset train size must be positive");
  positive(noise_source == "validation" || noise_source == "train" || noise_source == "csv",
           "noise_source must be validation, train or csv");
  (void)nn::parse_activation(activation);
  (void)make_loss(*this);
}

nlohmann::json to_json(const RunConfig& c) {
  const data::DatasetSpec& d = c.dataset;
  return {
      {"loss", c.loss},
      {"alpha", c.alpha},
      {"beta", c.beta},
      {"normalized", c.normalized},
      {"mix_weight", c.mix_weight},
      {"drop_constant_term", c.drop_constant_term},
      {"mc_samples", c.mc_samples},
      {"clip_threshold", c.clip_threshold},
      {"stochastic_data_encoder", c.stochastic_data_encoder},
      {"latent_dim", c.latent_dim},
      {"hidden", c.hidden},
      {"activation", c.activation},
      {"sigma_dec", c.sigma_dec},
      {"sigma_kde", c.sigma_kde},
      {"noise_source", c.noise_source},
      {"noise_label", c.noise_label},
      {"noise_centers", c.noise_centers},
      {"noise_csv", c.noise_csv},
      {"data_generator", d.generator},
      {"data_dim", d.dim},
      {"data_clusters", d.clusters},
      {"data_train", d.train},
      {"data_validation", d.validation},
      {"data_test", d.test},
      {"data_center_min", d.center_min},
      {"data_center_max", d.center_max},
      {"data_factors", d.factors},
      {"data_factor_scale", d.factor_scale},
      {"data_noise", d.noise},
      {"data_flip", d.flip},
      {"data_idx_images", d.idx_images},
      {"data_idx_labels", d.idx_labels},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"lr", c.lr},
      {"adam_beta1", c.adam_beta1},
      {"adam_beta2", c.adam_beta2},
      {"adam_eps", c.adam_eps},
      {"chunk_rows", c.chunk_rows},
      {"eval_rows", c.eval_rows},
      {"seed", c.seed},
      {"threads", c.threads},
      {"out_dir", c.out_dir},
      {"write_checkpoint", c.write_checkpoint},
      {"variants", c.variants},
      {"sweep_seeds", c.sweep_seeds},
      {"checkpoint", c.checkpoint},
      {"reconstruct_input", c.reconstruct_input},
      {"grid_count", c.grid_count},
  };
}

RunConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("config: top level must be a JSON object");
  nlohmann::json m = to_json(RunConfig{});
  for (const auto& [key, value] : j.items()) {
    if (!m.contains(key)) throw std::invalid_argument("config: unknown key '" + key + "'");
    if (value.is_object()) throw std::invalid_argument("config: nested object under '" + key + "'");
    m[key] = value;
  }
  RunConfig c;
  data::DatasetSpec& d = c.dataset;
  try {
    m.at("loss").get_to(c.loss);
    m.at("alpha").get_to(c.alpha);
    m.at("beta").get_to(c.beta);
    m.at("normalized").get_to(c.normalized);
    m.at("mix_weight").get_to(c.mix_weight);
    m.at("drop_constant_term").get_to(c.drop_constant_term);
    m.at("mc_samples").get_to(c.mc_samples);
    m.at("clip_threshold").get_to(c.clip_threshold);
    m.at("stochastic_data_encoder").get_to(c.stochastic_data_encoder);
    m.at("latent_dim").get_to(c.latent_dim);
    m.at("hidden").get_to(c.hidden);
    m.at("activation").get_to(c.activation);
    m.at("sigma_dec").get_to(c.sigma_dec);
    m.at("sigma_kde").get_to(c.sigma_kde);
    m.at("noise_source").get_to(c.noise_source);
    m.at("noise_label").get_to(c.noise_label);
    m.at("noise_centers").get_to(c.noise_centers);
    m.at("noise_csv").get_to(c.noise_csv);
    m.at("data_generator").get_to(d.generator);
    m.at("data_dim").get_to(d.dim);
    m.at("data_clusters").get_to(d.clusters);
    m.at("data_train").get_to(d.train);
    m.at("data_validation").get_to(d.validation);
    m.at("data_test").get_to(d.test);
    m.at("data_center_min").get_to(d.center_min);
    m.at("data_center_max").get_to(d.center_max);
    m.at("data_factors").get_to(d.factors);
    m.at("data_factor_scale").get_to(d.factor_scale);
    m.at("data_noise").get_to(d.noise);
    m.at("data_flip").get_to(d.flip);
    m.at("data_idx_images").get_to(d.idx_images);
    m.at("data_idx_labels").get_to(d.idx_labels);
    m.at("epochs").get_to(c.epochs);
    m.at("batch_size").get_to(c.batch_size);
    m.at("lr").get_to(c.lr);
    m.at("adam_beta1").get_to(c.adam_beta1);
    m.at("adam_beta2").get_to(c.adam_beta2);
    m.at("adam_eps").get_to(c.adam_eps);
    m.at("chunk_rows").get_to(c.chunk_rows);
    m.at("eval_rows").get_to(c.eval_rows);
    m.at("seed").get_to(c.seed);
    m.at("threads").get_to(c.threads);
    m.at("out_dir").get_to(c.out_dir);
    m.at("write_checkpoint").get_to(c.write_checkpoint);
    m.at("variants").get_to(c.variants);
    m.at("sweep_seeds").get_to(c.sweep_seeds);
    m.at("checkpoint").get_to(c.checkpoint);
    m.at("reconstruct_input").get_to(c.reconstruct_input);
    m.at("grid_count").get_to(c.grid_count);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config " + path + ": " + e.what());
  }
  return config_from_json(j);
}

losses::LossConfig make_loss(const RunConfig& cfg) {
  losses::LossConfig lc;
  lc.kind = losses::parse_loss_kind(cfg.loss);
  lc.drop_constant_term = cfg.drop_constant_term;
  lc.mc_samples = cfg.mc_samples;
  lc.clip_threshold = cfg.clip_threshold;
  lc.stochastic_data_encoder = cfg.stochastic_data_encoder;
  const psr::ScoringPair main(cfg.alpha, cfg.beta, cfg.normalized);
  const psr::ScoringPair base(0.0, 0.0, cfg.normalized);
  if (lc.kind == losses::LossKind::mixed) {
    losses::LossConfig part = lc;
    part.kind = losses::LossKind::fvnce;
    part.pair = main;
    lc.mix.push_back({part, cfg.mix_weight});
    if (cfg.mix_weight < 1.0) {
      part.pair = base;
      lc.mix.push_back({part, 1.0 - cfg.mix_weight});
    }
  } else if (cfg.mix_weight < 1.0) {
    const psr::ScoringPair parts[] = {main, base};
    const double w[] = {cfg.mix_weight, 1.0 - cfg.mix_weight};
    lc.pair = psr::combine(parts, w);
  } else {
    lc.pair = main;
  }
  lc.validate();
  return lc;
}

nn::Architecture make_architecture(const RunConfig& cfg, Index data_dim) {
  nn::Architecture a;
  a.data_dim = data_dim;
  a.latent_dim = cfg.latent_dim;
  a.hidden = cfg.hidden;
  a.activation = nn::parse_activation(cfg.activation);
  a.sigma_dec = cfg.sigma_dec;
  return a;
}

RunConfig apply_variant(RunConfig cfg, const std::string& variant) {
  cfg.alpha = 0.0;
  cfg.beta = 0.0;
  cfg.mix_weight = 1.0;
  if (variant.rfind("alpha:", 0) == 0) {
    cfg.loss = "fvnce";
    cfg.alpha = std::stod(variant.substr(6));
    cfg.mix_weight = 0.9;
  } else if (variant.rfind("loss:", 0) == 0) {
    cfg.loss = variant.substr(5);
  } else if (variant == "j01") {
    // Started from Delta far below zero, softplus alone has no gradient; it
    // gets the same 0.1 (0, 0) share as the alpha variants.
    cfg.loss = "fvnce";
    cfg.beta = 1.0;
    cfg.mix_weight = 0.9;
  } else {
    cfg.loss = variant;
  }
  (void)losses::parse_loss_kind(cfg.loss);
  return cfg;
}

// ---------------------------------------------------------------------------
// Training.

Experiment prepare(const RunConfig& cfg) {
  cfg.validate();
  const Rng root(cfg.seed);
  Rng data_rng = root.split(kDataStream);
  Experiment ex;
  ex.config = cfg;
  ex.dataset = data::synth_dataset(cfg.dataset, data_rng);

  Matrix centers;
  if (cfg.noise_source == "csv") {
    centers = data::load_csv_matrix(cfg.noise_csv);
  } else if (cfg.noise_source == "train") {
    centers = data::select_label(ex.dataset.train, ex.dataset.train_labels, cfg.noise_label);
  } else {
    centers = data::select_label(ex.dataset.validation, ex.dataset.validation_labels, cfg.noise_label);
  }
  if (cfg.noise_centers > 0 && centers.rows() > cfg.noise_centers) {
    centers = centers.topRows(cfg.noise_centers).eval();
  }
  if (centers.rows() == 0) throw std::invalid_argument("noise: no KDE centers selected");
  if (centers.cols() != ex.dataset.dim()) {
    throw std::invalid_argument("noise: KDE centers have the wrong dimension");
  }
  ex.noise = std::make_shared<dist::GaussianKde>(centers, cfg.kde_bandwidth());
  ex.train_log_pn = ex.noise->log_pdf_rows(ex.dataset.train);

  const Index n_eval = std::min(cfg.eval_rows, ex.dataset.test.rows());
  if (n_eval == 0) throw std::invalid_argument("dataset: test split is empty");
  ex.eval_data = ex.dataset.test.topRows(n_eval);
  ex.eval_labels.assign(ex.dataset.test_labels.begin(), ex.dataset.test_labels.begin() + n_eval);
  Rng eval_rng = root.split(kEvalStream);
  ex.eval_noise = ex.noise->sample(eval_rng, n_eval);
  return ex;
}

MetricsRow evaluate(const nn::LatentNet& net, const diff::ParamVector& params, const Experiment& ex) {
  MetricsRow row;
  row.data_loglik = nn::reconstruction_log_likelihood(net, params, ex.eval_data).mean();
  row.noise_loglik = nn::reconstruction_log_likelihood(net, params, ex.eval_noise).mean();
  row.difference = row.data_loglik - row.noise_loglik;
  return row;
}

TrainResult initialize(const RunConfig& cfg, Index data_dim) {
  TrainResult res;
  Rng init = Rng(cfg.seed).split(kInitStream);
  res.net = nn::build_latent_net(make_architecture(cfg, data_dim), res.params, init);
  res.initial_hash = res.params.hash();
  return res;
}

TrainResult train(const Experiment& ex) {
  const RunConfig& cfg = ex.config;
  const losses::LossConfig loss = make_loss(cfg);
  TrainResult res = initialize(cfg, ex.dataset.dim());
  const diff::AdamConfig adam{cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
  diff::AdamState state;
  const Rng train_rng = Rng(cfg.seed).split(kTrainStream);
  const Matrix& xs = ex.dataset.train;
  const Index n = xs.rows();
  const Index bs = std::min(cfg.batch_size, n);
  const Index latent = cfg.latent_dim;
  const losses::DensityUse use = losses::density_use(loss);

  const auto start = std::chrono::steady_clock::now();
  MetricsRow first = evaluate(res.net, res.params, ex);
  res.rows.push_back(first);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng er = train_rng.split(static_cast<std::uint64_t>(epoch));
    std::vector<Index> perm(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    Rng shuffle = er.split(0);
    for (Index i = n - 1; i > 0; --i) {
      const auto j = static_cast<Index>(shuffle.index(static_cast<std::uint64_t>(i + 1)));
      std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }

    double loss_sum = 0.0;
    int batches = 0;
    losses::Diagnostics epoch_diag;
    for (Index from = 0; from < n; from += bs) {
      const Index rows = std::min(bs, n - from);
      Rng br = er.split(static_cast<std::uint64_t>(from / bs + 1));
      Rng noise_rng = br.split(0);
      const Matrix xd = gather_rows(xs, perm, from, rows);
      Vector lpd(rows);
      for (Index i = 0; i < rows; ++i) lpd(i) = ex.train_log_pn(perm[static_cast<std::size_t>(from + i)]);
      const Matrix xn = ex.noise->sample(noise_rng, rows);

      const Index chunks = (rows + cfg.chunk_rows - 1) / cfg.chunk_rows;
      std::vector<ChunkResult> results(static_cast<std::size_t>(chunks));
      parallel_chunks(chunks, cfg.threads, [&](Index c) {
        const Index c0 = c * cfg.chunk_rows;
        const Index cn = std::min(cfg.chunk_rows, rows - c0);
        Rng cr = br.split(static_cast<std::uint64_t>(c + 1));
        const Vector lpc = lpd.segment(c0, cn);
        const losses::Batch batch =
            losses::make_batch(xd.middleRows(c0, cn), xn.middleRows(c0, cn), *ex.noise, latent,
                               cfg.mc_samples, cr, use, &lpc);
        diff::Tape tape(&res.params);
        ChunkResult& out = results[static_cast<std::size_t>(c)];
        const diff::Var j = losses::objective(tape, res.net, loss, batch, &out.diag);
        out.value = tape.scalar_value(j);
        out.grad = tape.backward(j);
      });

      double value = 0.0;
      Vector grad = Vector::Zero(res.params.size());
      losses::Diagnostics diag;
      for (Index c = 0; c < chunks; ++c) {
        const Index cn = std::min(cfg.chunk_rows, rows - c * cfg.chunk_rows);
        const double w = static_cast<double>(cn) / static_cast<double>(rows);
        const ChunkResult& r = results[static_cast<std::size_t>(c)];
        value += w * r.value;
        grad += w * r.grad;
        diag += r.diag;
      }
      if (!std::isfinite(value) || !grad.allFinite()) {
        char msg[256];
        std::snprintf(msg, sizeof msg,
                      "non-finite objective at epoch %d batch %lld: value=%g, mean delta data=%g, "
                      "mean delta noise=%g, clipped=%zu",
                      epoch, static_cast<long long>(from / bs), value, diag.mean_delta_data(),
                      diag.mean_delta_noise(), diag.clip.clipped);
        throw std::runtime_error(msg);
      }
      // Maximize the objective.
      const diff::AdamUpdate up = diff::adam_step(res.params.values(), -grad, state, adam);
      res.params.set_values(up.params);
      state = up.state;
      loss_sum += -value;
      ++batches;
      epoch_diag += diag;
    }

    MetricsRow row = evaluate(res.net, res.params, ex);
    row.epoch = epoch;
    row.loss = loss_sum / batches;
    row.clip_count = epoch_diag.clip.clipped;
    row.mean_delta_data = epoch_diag.mean_delta_data();
    row.mean_delta_noise = epoch_diag.mean_delta_noise();
    row.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    res.rows.push_back(row);
  }
  return res;
}

void write_metrics(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream os = open_out(path);
  os << "epoch,loss,data_loglik,noise_loglik,difference,clip_count,mean_delta_data,"
        "mean_delta_noise\n";
  for (const auto& r : rows) {
    os << r.epoch << ',' << fmt(r.loss) << ',' << fmt(r.data_loglik) << ','
       << fmt(r.noise_loglik) << ',' << fmt(r.difference) << ',' << r.clip_count << ','
       << fmt(r.mean_delta_data) << ',' << fmt(r.mean_delta_noise) << '\n';
  }
}

void write_timing(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream os = open_out(path);
  os << "epoch,wall_seconds\n";
  for (const auto& r : rows) os << r.epoch << ',' << fmt(r.wall_seconds) << '\n';
}

TrainResult run_train(const RunConfig& cfg) {
  const Experiment ex = prepare(cfg);
  TrainResult res = train(ex);
  ensure_dir(cfg.out_dir);
  write_metrics(join(cfg.out_dir, "metrics.csv"), res.rows);
  write_timing(join(cfg.out_dir, "timing.csv"), res.rows);
  {
    std::ofstream os = open_out(join(cfg.out_dir, "config.json"));
    os << to_json(cfg).dump(2) << '\n';
  }
  if (cfg.write_checkpoint) {
    nlohmann::json meta = {{"config", to_json(cfg)}, {"data_dim", ex.dataset.dim()}};
    diff::save_checkpoint(join(cfg.out_dir, "checkpoint.bin"), res.params, cfg.seed,
                          static_cast<std::int64_t>(cfg.epochs), meta);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Sweep.

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::vector<SweepRow> run_sweep(const RunConfig& cfg, std::vector<SweepSummary>* summary) {
  if (cfg.variants.empty()) throw std::invalid_argument("sweep: no variants");
  if (cfg.sweep_seeds.empty()) throw std::invalid_argument("sweep: no seeds");
  std::vector<SweepRow> out;
  const bool write = !cfg.out_dir.empty();
  if (write) ensure_dir(join(cfg.out_dir, "runs"));
  for (std::uint64_t seed : cfg.sweep_seeds) {
    RunConfig base = cfg;
    base.seed = seed;
    Experiment ex = prepare(base);
    for (const std::string& v : cfg.variants) {
      ex.config = apply_variant(base, v);
      const TrainResult res = train(ex);
      out.push_back({seed, v, res.rows.back(), res.initial_hash});
      if (write) {
        write_metrics(join(join(cfg.out_dir, "runs"),
                           "seed" + std::to_string(seed) + "_" + sanitize(v) + ".csv"),
                      res.rows);
      }
    }
  }

  std::vector<SweepSummary> table;
  for (const std::string& v : cfg.variants) {
    std::vector<double> d;
    std::vector<double> nz;
    std::vector<double> diff;
    for (const auto& r : out) {
      if (r.variant != v) continue;
      d.push_back(r.final.data_loglik);
      nz.push_back(r.final.noise_loglik);
      diff.push_back(r.final.difference);
    }
    table.push_back({v, median(d), median(nz), median(diff)});
  }

  if (write) {
    std::ofstream runs = open_out(join(cfg.out_dir, "sweep_runs.csv"));
    runs << "seed,variant,data_loglik,noise_loglik,difference,initial_hash\n";
    for (const auto& r : out) {
      runs << r.seed << ',' << r.variant << ',' << fmt(r.final.data_loglik) << ','
           << fmt(r.final.noise_loglik) << ',' << fmt(r.final.difference) << ',' << r.initial_hash
           << '\n';
    }
    std::ofstream tab = open_out(join(cfg.out_dir, "sweep_table.csv"));
    tab << "variant,data_loglik,noise_loglik,difference\n";
    for (const auto& s : table) {
      tab << s.variant << ',' << fmt(s.data_loglik) << ',' << fmt(s.noise_loglik) << ','
          << fmt(s.difference) << '\n';
    }
  }
  if (summary) *summary = std::move(table);
  return out;
}

// ---------------------------------------------------------------------------
// Reconstruction.

Vector reconstruction_mse(const nn::LatentNet& net, const diff::ParamVector& params,
                          const Matrix& x) {
  const Matrix rec = nn::decode_mean(net, params, nn::encode_mean(net, params, x));
  return (rec - x).rowwise().squaredNorm() / static_cast<double>(x.cols());
}

std::vector<double> cluster_mse(const nn::LatentNet& net, const diff::ParamVector& params,
                                const Matrix& x, const std::vector<int>& labels, int clusters) {
  if (static_cast<Index>(labels.size()) != x.rows()) {
    throw std::invalid_argument("cluster_mse: label count differs from row count");
  }
  const Vector mse = reconstruction_mse(net, params, x);
  std::vector<double> sum(static_cast<std::size_t>(clusters), 0.0);
  std::vector<double> count(static_cast<std::size_t>(clusters), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= clusters) continue;
    sum[static_cast<std::size_t>(labels[i])] += mse(static_cast<Index>(i));
    count[static_cast<std::size_t>(labels[i])] += 1.0;
  }
  for (std::size_t k = 0; k < sum.size(); ++k) {
    sum[k] = count[k] > 0.0 ? sum[k] / count[k] : std::nan("");
  }
  return sum;
}

void run_reconstruct(const RunConfig& cli_cfg) {
  const std::string path =
      cli_cfg.checkpoint.empty() ? join(cli_cfg.out_dir, "checkpoint.bin") : cli_cfg.checkpoint;
  const diff::Checkpoint ck = diff::load_checkpoint(path);
  if (!ck.header.contains("config")) throw std::runtime_error("checkpoint has no run config");
  RunConfig cfg = config_from_json(ck.header.at("config"));
  cfg.out_dir = cli_cfg.out_dir;
  cfg.grid_count = cli_cfg.grid_count;
  cfg.reconstruct_input = cli_cfg.reconstruct_input;

  const Experiment ex = prepare(cfg);
  const Index dim = ck.header.value("data_dim", ex.dataset.dim());
  const nn::LatentNet net = nn::describe_latent_net(make_architecture(cfg, dim));
  {
    diff::ParamVector layout;
    Rng scratch(0);
    (void)nn::build_latent_net(make_architecture(cfg, dim), layout, scratch);
    if (layout.size() != ck.params.size()) {
      throw std::runtime_error("checkpoint parameter count does not match its configuration");
    }
  }

  Matrix inputs = ex.eval_data;
  std::vector<int> labels = ex.eval_labels;
  if (!cfg.reconstruct_input.empty()) {
    inputs = data::load_csv_matrix(cfg.reconstruct_input);
    labels.assign(static_cast<std::size_t>(inputs.rows()), -1);
  }
  if (inputs.cols() != dim) {
    throw std::invalid_argument("reconstruct: inputs have " + std::to_string(inputs.cols()) +
                                " columns, model expects " + std::to_string(dim));
  }

  ensure_dir(cfg.out_dir);
  std::ofstream csv = open_out(join(cfg.out_dir, "reconstruct.csv"));
  csv << "set,index,label,loglik,mse\n";
  const data::GridLayout layout = data::default_layout(dim, 8);
  auto emit = [&](const std::string& set, const Matrix& x, const std::vector<int>& lab) {
    const Vector ll = nn::reconstruction_log_likelihood(net, ck.params, x);
    const Vector mse = reconstruction_mse(net, ck.params, x);
    for (Index i = 0; i < x.rows(); ++i) {
      csv << set << ',' << i << ',' << lab[static_cast<std::size_t>(i)] << ',' << fmt(ll(i)) << ','
          << fmt(mse(i)) << '\n';
    }
    const Index shown = std::min(cfg.grid_count, x.rows());
    const Matrix rec = nn::decode_mean(net, ck.params, nn::encode_mean(net, ck.params, x.topRows(shown)));
    Matrix grid(2 * shown, dim);
    for (Index i = 0; i < shown; ++i) {
      grid.row(2 * i) = x.row(i);
      grid.row(2 * i + 1) = rec.row(i);
    }
    data::write_pgm(join(cfg.out_dir, "recon_" + set + ".pgm"), grid, layout);
  };
  emit("data", inputs, labels);
  emit("noise", ex.eval_noise, std::vector<int>(static_cast<std::size_t>(ex.eval_noise.rows()), -1));
}

// ---------------------------------------------------------------------------
// Curves.

void write_curves(const std::string& path, const psr::ScoringPair& pair, double threshold,
                  const std::vector<double>& ratios) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream os = open_out(path);
  os << "r,f1,f0,S1,S0,loss1,loss0\n";
  for (double r : ratios) {
    const psr::RatioPoint p = psr::RatioPoint::from_ratio(r);
    os << fmt(r) << ',' << fmt(psr::eval_f1(pair, r)) << ',' << fmt(psr::eval_f0(pair, r)) << ','
       << fmt(psr::score(pair, psr::Outcome::data, p.mu)) << ','
       << fmt(psr::score(pair, psr::Outcome::noise, p.mu)) << ','
       << fmt(psr::logit_loss(pair, psr::Outcome::data, p.delta, threshold)) << ','
       << fmt(psr::logit_loss(pair, psr::Outcome::noise, p.delta, threshold)) << '\n';
  }
}

}  // namespace fvnce::cli

#include "conserva/trainer.hpp"

#include <numeric>

#include "conserva/common.hpp"
#include "conserva/io.hpp"

namespace conserva {

namespace {

// Dedicated RNG stream ids so different draws can't collide.
constexpr std::uint64_t kSplitStream = 0x737000;
constexpr std::uint64_t kInitStream = 0x100;     // + field index
constexpr std::uint64_t kShuffleStream = 0x20000;  // + epoch

void fisher_yates(std::vector<int>& idx, RngStream& rng) {
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[rng.below(static_cast<std::uint64_t>(i))]);
}

Mat gather(const Mat& src, const std::vector<int>& idx, int lo, int hi) {
  Mat out(src.rows(), hi - lo);
  for (int j = lo; j < hi; ++j) out.col(j - lo) = src.col(idx[j]);
  return out;
}

struct AdamState {
  Vec m, v;
  long t = 0;
};

LossValue evaluate(const std::vector<NeuralField>& fields, const Mat& z,
                   const Mat& f, const LossOptions& opt) {
  const int n = static_cast<int>(fields.size());
  std::vector<Mat> g(n);
  Vec h;
  for (int i = 0; i < n; ++i) fields[i].value_grad_batch(z, h, g[i]);
  return ensemble_loss(f, g, opt);
}

}  // namespace

TrainResult train_ensemble(const SystemSpec& sys, const SampleBatch& data,
                           const ArchConfig& arch, const TrainConfig& cfg) {
  if (cfg.models < 1) throw ConfigError("train: need at least one model");
  if (cfg.epochs < 1 || cfg.batch < 1 || cfg.lr <= 0)
    throw ConfigError("train: bad epochs/batch/lr");
  const int p = data.count();
  if (p < 4) throw ConfigError("train: need at least 4 samples");
  if (data.states.rows() != sys.dim)
    throw ConfigError("train: sample dimension does not match system");

  LossOptions opt = cfg.loss;
  opt.lambda = cfg.lambda;

  // Seeded 50/50 split; the test half never reaches an update.
  std::vector<int> perm(p);
  std::iota(perm.begin(), perm.end(), 0);
  {
    RngStream rng(cfg.seed, kSplitStream);
    fisher_yates(perm, rng);
  }
  const int n_train = p / 2;
  const Mat z_train = gather(data.states, perm, 0, n_train);
  const Mat f_train = gather(data.fields, perm, 0, n_train);
  const Mat z_test = gather(data.states, perm, n_train, p);
  const Mat f_test = gather(data.fields, perm, n_train, p);

  TrainResult res;
  const int n = cfg.models;
  for (int i = 0; i < n; ++i)
    res.fields.emplace_back(sys, arch, cfg.seed, kInitStream + i);

  std::vector<AdamState> adam(n);
  std::vector<Vec> grads(n);
  for (int i = 0; i < n; ++i) {
    adam[i].m = Vec::Zero(res.fields[i].param_count());
    adam[i].v = Vec::Zero(res.fields[i].param_count());
    grads[i] = Vec::Zero(res.fields[i].param_count());
  }

  std::vector<int> order(n_train);
  std::iota(order.begin(), order.end(), 0);
  const int batch = cfg.plain_sgd ? n_train : std::min(cfg.batch, n_train);

  std::vector<Mat> g(n), u(n);
  Vec h;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (!cfg.plain_sgd) {
      RngStream rng(cfg.seed, kShuffleStream + epoch);
      fisher_yates(order, rng);
    }
    double run_cons = 0, run_ind = 0;
    long run_used = 0;

    for (int start = 0; start < n_train; start += batch) {
      const int stop = std::min(start + batch, n_train);
      Mat zb(z_train.rows(), stop - start), fb(f_train.rows(), stop - start);
      for (int j = start; j < stop; ++j) {
        zb.col(j - start) = z_train.col(order[j]);
        fb.col(j - start) = f_train.col(order[j]);
      }
      for (int i = 0; i < n; ++i) res.fields[i].value_grad_batch(zb, h, g[i]);
      const LossValue lv = ensemble_loss_grad(fb, g, opt, u);
      res.skipped_updates += lv.skipped;
      run_cons += lv.conservation * lv.used;
      run_ind += lv.independence * lv.used;
      run_used += lv.used;

      const Vec alpha = Vec::Zero(zb.cols());
      for (int i = 0; i < n; ++i) {
        grads[i].setZero();
        res.fields[i].loss_param_grad_batch(zb, alpha, u[i], grads[i]);
        Vec theta = res.fields[i].pack_params();
        if (cfg.plain_sgd) {
          theta -= cfg.lr * grads[i];
        } else {
          AdamState& st = adam[i];
          ++st.t;
          st.m = cfg.beta1 * st.m + (1 - cfg.beta1) * grads[i];
          st.v = cfg.beta2 * st.v +
                 (1 - cfg.beta2) * grads[i].cwiseProduct(grads[i]);
          const double bc1 = 1 - std::pow(cfg.beta1, st.t);
          const double bc2 = 1 - std::pow(cfg.beta2, st.t);
          theta.array() -= cfg.lr * (st.m.array() / bc1) /
                           ((st.v.array() / bc2).sqrt() + cfg.adam_eps);
        }
        res.fields[i].unpack_params(theta);
      }
    }

    EpochRow row;
    row.epoch = epoch;
    row.train_conservation = run_cons / run_used;
    row.train_independence = run_ind / run_used;
    row.train_total = row.train_conservation + cfg.lambda * row.train_independence;
    const LossValue te = evaluate(res.fields, z_test, f_test, opt);
    row.test_conservation = te.conservation;
    row.test_independence = te.independence;
    row.test_total = te.total(cfg.lambda);
    res.history.push_back(row);
  }

  res.final_train = evaluate(res.fields, z_train, f_train, opt);
  res.final_test = evaluate(res.fields, z_test, f_test, opt);
  res.per_field_train = res.final_train.per_field;
  res.per_field_test = res.final_test.per_field;
  return res;
}

void write_history_csv(const std::filesystem::path& path,
                       const std::vector<EpochRow>& history) {
  const std::vector<std::string> cols = {
      "epoch",          "train_conservation", "train_independence",
      "train_total",    "test_conservation",  "test_independence",
      "test_total"};
  Mat rows(history.size(), 7);
  for (std::size_t i = 0; i < history.size(); ++i) {
    const EpochRow& r = history[i];
    rows.row(i) << r.epoch, r.train_conservation, r.train_independence,
        r.train_total, r.test_conservation, r.test_independence, r.test_total;
  }
  write_csv(path, cols, rows);
}

std::vector<EpochRow> read_history_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  if (t.columns.size() != 7)
    throw ArtifactError("history csv has unexpected shape: " + path.string());
  std::vector<EpochRow> out(t.rows.rows());
  for (Eigen::Index i = 0; i < t.rows.rows(); ++i) {
    out[i].epoch = static_cast<int>(t.rows(i, 0));
    out[i].train_conservation = t.rows(i, 1);
    out[i].train_independence = t.rows(i, 2);
    out[i].train_total = t.rows(i, 3);
    out[i].test_conservation = t.rows(i, 4);
    out[i].test_independence = t.rows(i, 5);
    out[i].test_total = t.rows(i, 6);
  }
  return out;
}

}  // namespace conserva

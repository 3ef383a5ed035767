// Joint training of an ensemble of neural scalar fields against the
// conservation + pairwise-independence objective.
//
// The sample batch is split 50/50 into train/test by a seeded permutation;
// test data never influences an update. Train metrics are running minibatch
// averages; test metrics come from one full evaluation pass per epoch.
#pragma once

#include <vector>

#include "conserva/field.hpp"
#include "conserva/loss.hpp"
#include "conserva/systems.hpp"

namespace conserva {

struct TrainConfig {
  int models = 2;  // ensemble size n
  double lambda = 0.02;
  int epochs = 100;
  int batch = 256;
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  std::uint64_t seed = 0;
  bool plain_sgd = false;  // full-batch steepest descent (sanity mode)
  LossOptions loss;        // lambda here is ignored; the one above is used
};

struct EpochRow {
  int epoch = 0;
  double train_conservation = 0, train_independence = 0, train_total = 0;
  double test_conservation = 0, test_independence = 0, test_total = 0;
};

struct TrainResult {
  std::vector<NeuralField> fields;
  std::vector<EpochRow> history;
  // Full-split evaluations after the last epoch.
  Vec per_field_train, per_field_test;  // per-field conservation terms
  LossValue final_train, final_test;
  int skipped_updates = 0;  // degenerate samples met during training
};

TrainResult train_ensemble(const SystemSpec& sys, const SampleBatch& data,
                           const ArchConfig& arch, const TrainConfig& cfg);

// History CSV: one row per epoch, the six metric columns of EpochRow.
void write_history_csv(const std::filesystem::path& path,
                       const std::vector<EpochRow>& history);
std::vector<EpochRow> read_history_csv(const std::filesystem::path& path);

}  // namespace conserva

#pragma once

#include <span>
#include <string>
#include <vector>

#include "awconv/data.hpp"
#include "awconv/models.hpp"

namespace awconv {

struct TrainConfig {
  std::string model = "tiny";
  std::string attention = "none";

  std::string data = "shapes";  // shapes | cifar10 | cifar100
  std::string data_path;        // train file(s), comma separated (cifar)
  std::string val_path;         // val file (cifar)
  uint64_t data_seed = 7;       // shapes generator seed
  int64_t train_n = 512;
  int64_t val_n = 256;
  int64_t image_hw = 32;
  int64_t classes = -1;  // -1: architecture/dataset default

  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int64_t epochs = 10;
  int64_t batch_size = 32;
  std::vector<int64_t> lr_decay_epochs;  // empty: 50% and 75% of epochs
  double lr_decay_factor = 0.1;
  uint64_t seed = 0;
  DType dtype = DType::f32;
  std::string augment = "none";
  std::string out_dir;  // checkpoints/history land here when set
  bool branch_bn_eval = false;  // AW branch norm uses running stats in training

  void validate() const;
  static TrainConfig from_file(const std::string& path);
  void set(const std::string& key, const std::string& value);
  std::string echo() const;  // key=value lines, also embedded in checkpoints
};

struct EpochStats {
  int64_t epoch = 0;
  double train_loss = 0;
  double val_acc = 0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  double final_val_acc = 0;
  std::string checkpoint_path;
};

// Full training loop: deterministic per config seed, records per-epoch train
// loss and validation accuracy, writes the final checkpoint and history when
// out_dir is set. A non-finite loss aborts with a diagnostic.
TrainResult fit(const TrainConfig& cfg);

// v <- momentum*v + grad + weight_decay*param; param <- param - lr*v.
template <typename T>
void sgd_update(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& velocity, T lr, T momentum,
                T weight_decay);

// Whole-model step; weight decay applies to flagged entries only
// (convolution and linear weights, not norm affines or biases).
template <typename T>
void sgd_step(std::vector<typename Model<T>::Entry>& params, std::span<const Node<T>> param_nodes,
              std::vector<Tensor<T>>& velocity, T lr, T momentum, T weight_decay);

template <typename T>
double evaluate(Model<T>& model, const Dataset& data, int64_t batch_size = 64);

Dataset load_train_dataset(const TrainConfig& cfg);
Dataset load_val_dataset(const TrainConfig& cfg);

// Checkpoint layout (little-endian): magic "AWCK", u32 version, u8 dtype,
// u64 epoch, length-prefixed config echo and RNG state, then named tensors
// (params, then buffers) as name / dtype / dims / raw payload. Reload
// restores bitwise-identical eval outputs.
template <typename T>
void save_checkpoint(const std::string& path, const Model<T>& model, const TrainConfig& cfg,
                     int64_t epoch, const Rng& rng);

struct CheckpointInfo {
  TrainConfig config;
  int64_t epoch = 0;
  DType dtype = DType::f32;
  std::string rng_state;
};

CheckpointInfo read_checkpoint_info(const std::string& path);

template <typename T>
void load_checkpoint(const std::string& path, Model<T>& model, CheckpointInfo* info = nullptr);

}  // namespace awconv

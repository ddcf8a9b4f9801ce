#include "awconv/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "awconv/errors.hpp"
#include "awconv/nn_ops.hpp"

namespace awconv {

void TrainConfig::validate() const {
  if (lr < 0) throw UsageError("lr must be >= 0");
  if (momentum < 0 || momentum >= 1) throw UsageError("momentum must be in [0,1)");
  if (weight_decay < 0) throw UsageError("weight_decay must be >= 0");
  if (epochs < 1) throw UsageError("epochs must be >= 1");
  // Batch statistics need a floor; trailing smaller batches are skipped.
  if (batch_size < 8) throw UsageError("batch_size must be >= 8");
  if (lr_decay_factor <= 0 || lr_decay_factor > 1) {
    throw UsageError("lr_decay_factor must be in (0,1]");
  }
  if (data != "shapes" && data != "cifar10" && data != "cifar100") {
    throw UsageError("data must be shapes|cifar10|cifar100");
  }
  if (data == "shapes" && train_n < 8) throw UsageError("train_n must be >= 8");
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

TrainConfig TrainConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config '" + path + "'");
  TrainConfig cfg;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError("config line " + std::to_string(lineno) + ": expected key=value");
    }
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  try {
    if (key == "model") model = value;
    else if (key == "attention") attention = value;
    else if (key == "data") data = value;
    else if (key == "data_path") data_path = value;
    else if (key == "val_path") val_path = value;
    else if (key == "data_seed") data_seed = std::stoull(value);
    else if (key == "train_n") train_n = std::stoll(value);
    else if (key == "val_n") val_n = std::stoll(value);
    else if (key == "image_hw") image_hw = std::stoll(value);
    else if (key == "classes") classes = std::stoll(value);
    else if (key == "lr") lr = std::stod(value);
    else if (key == "momentum") momentum = std::stod(value);
    else if (key == "weight_decay") weight_decay = std::stod(value);
    else if (key == "epochs") epochs = std::stoll(value);
    else if (key == "batch_size") batch_size = std::stoll(value);
    else if (key == "lr_decay_factor") lr_decay_factor = std::stod(value);
    else if (key == "lr_decay_epochs") {
      lr_decay_epochs.clear();
      for (const std::string& e : split_commas(value)) lr_decay_epochs.push_back(std::stoll(e));
    } else if (key == "seed") seed = std::stoull(value);
    else if (key == "dtype") {
      if (value == "f32") dtype = DType::f32;
      else if (value == "f64") dtype = DType::f64;
      else throw UsageError("dtype must be f32|f64");
    } else if (key == "augment") augment = value;
    else if (key == "out_dir") out_dir = value;
    else if (key == "branch_bn_eval") branch_bn_eval = (value == "1" || value == "true");
    else throw UsageError("unknown config key '" + key + "'");
  } catch (const std::invalid_argument&) {
    throw UsageError("bad value '" + value + "' for config key '" + key + "'");
  } catch (const std::out_of_range&) {
    throw UsageError("bad value '" + value + "' for config key '" + key + "'");
  }
}

std::string TrainConfig::echo() const {
  std::ostringstream os;
  os << "model=" << model << "\nattention=" << attention << "\ndata=" << data;
  if (!data_path.empty()) os << "\ndata_path=" << data_path;
  if (!val_path.empty()) os << "\nval_path=" << val_path;
  os << "\ndata_seed=" << data_seed << "\ntrain_n=" << train_n << "\nval_n=" << val_n
     << "\nimage_hw=" << image_hw << "\nclasses=" << classes << "\nlr=" << lr
     << "\nmomentum=" << momentum << "\nweight_decay=" << weight_decay << "\nepochs=" << epochs
     << "\nbatch_size=" << batch_size << "\nlr_decay_factor=" << lr_decay_factor;
  os << "\nlr_decay_epochs=";
  for (size_t i = 0; i < lr_decay_epochs.size(); ++i) {
    if (i) os << ",";
    os << lr_decay_epochs[i];
  }
  os << "\nseed=" << seed << "\ndtype=" << dtype_name(dtype) << "\naugment=" << augment
     << "\nbranch_bn_eval=" << (branch_bn_eval ? 1 : 0) << "\n";
  return os.str();
}

Dataset load_train_dataset(const TrainConfig& cfg) {
  if (cfg.data == "shapes") {
    return gen_shapes(cfg.data_seed, cfg.train_n, cfg.classes < 0 ? 3 : cfg.classes,
                      cfg.image_hw);
  }
  if (cfg.data_path.empty()) throw UsageError("data_path required for cifar data");
  return read_cifar(split_commas(cfg.data_path),
                    cfg.data == "cifar10" ? CifarKind::cifar10 : CifarKind::cifar100);
}

Dataset load_val_dataset(const TrainConfig& cfg) {
  if (cfg.data == "shapes") {
    // Disjoint stream from the train split.
    return gen_shapes(cfg.data_seed + 0x517cc1b727220a95ull, cfg.val_n,
                      cfg.classes < 0 ? 3 : cfg.classes, cfg.image_hw);
  }
  if (cfg.val_path.empty()) throw UsageError("val_path required for cifar data");
  return read_cifar(split_commas(cfg.val_path),
                    cfg.data == "cifar10" ? CifarKind::cifar10 : CifarKind::cifar100);
}

template <typename T>
void sgd_update(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& velocity, T lr, T momentum,
                T weight_decay) {
  if (param.shape() != grad.shape() || param.shape() != velocity.shape()) {
    throw ShapeError("sgd_update operands must share a shape");
  }
  const int64_t n = param.numel();
  for (int64_t j = 0; j < n; ++j) {
    velocity[j] = momentum * velocity[j] + grad[j] + weight_decay * param[j];
    param[j] -= lr * velocity[j];
  }
}

template <typename T>
void sgd_step(std::vector<typename Model<T>::Entry>& params, std::span<const Node<T>> param_nodes,
              std::vector<Tensor<T>>& velocity, T lr, T momentum, T weight_decay) {
  if (params.size() != param_nodes.size() || params.size() != velocity.size()) {
    throw UsageError("sgd_step: params/grads/velocity size mismatch");
  }
  for (size_t i = 0; i < params.size(); ++i) {
    sgd_update(params[i].value, param_nodes[i].grad(), velocity[i], lr, momentum,
               params[i].decay ? weight_decay : T(0));
  }
}

template <typename T>
double evaluate(Model<T>& model, const Dataset& data, int64_t batch_size) {
  BatchIterator it = batches(data, batch_size, 0, 0, Augment::none, false);
  int64_t correct = 0, total = 0;
  while (auto batch = it.next()) {
    Tensor<T> x = batch->images.template cast<T>();
    Tensor<T> logits = model.forward_eval(x);
    const int64_t k = logits.extent(1);
    for (int64_t l = 0; l < batch->size(); ++l) {
      int64_t best = 0;
      for (int64_t j = 1; j < k; ++j) {
        if (logits[l * k + j] > logits[l * k + best]) best = j;
      }
      if (best == batch->labels[static_cast<size_t>(l)]) ++correct;
      ++total;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

namespace {

template <typename T>
TrainResult fit_impl(const TrainConfig& cfg) {
  cfg.validate();
  Dataset train = load_train_dataset(cfg);
  Dataset val = load_val_dataset(cfg);
  const Augment augment = parse_augment(cfg.augment);

  const int64_t classes = cfg.classes < 0 ? train.classes : cfg.classes;
  LayerGraph graph = build_arch(cfg.model, parse_attention(cfg.attention), classes);
  Model<T> model(std::move(graph), cfg.seed);

  std::vector<Tensor<T>> velocity;
  velocity.reserve(model.params().size());
  for (const auto& e : model.params()) velocity.push_back(Tensor<T>::zeros(e.value.shape()));

  std::vector<int64_t> decay_epochs = cfg.lr_decay_epochs;
  if (decay_epochs.empty()) decay_epochs = {cfg.epochs / 2, (3 * cfg.epochs) / 4};

  ForwardHooks<T> hooks;
  hooks.branch_bn_eval = cfg.branch_bn_eval;

  Rng run_rng(cfg.seed);
  TrainResult result;
  double lr = cfg.lr;
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int64_t d : decay_epochs) {
      if (epoch == d && epoch > 0) lr *= cfg.lr_decay_factor;
    }
    BatchIterator it = batches(train, cfg.batch_size, cfg.seed, epoch, augment, true);
    double loss_sum = 0;
    int64_t seen = 0;
    while (auto batch = it.next()) {
      if (batch->size() < 8) continue;  // batch-norm floor; trailing batch only
      Tensor<T> x = batch->images.template cast<T>();
      Tape<T> tape;
      std::vector<Node<T>> pn = model.bind_params(tape, true);
      Node<T> logits = model.forward(tape, pn, x, true, &hooks);
      Node<T> loss = nn::softmax_cross_entropy(logits, batch->labels);
      const double lv = static_cast<double>(loss.value()[0]);
      if (!std::isfinite(lv)) {
        throw NumericError("training diverged: loss " + std::to_string(lv) + " at epoch " +
                           std::to_string(epoch + 1) + " after " + std::to_string(seen) +
                           " samples");
      }
      tape.backward(loss);
      sgd_step<T>(model.params(), pn, velocity, static_cast<T>(lr),
                  static_cast<T>(cfg.momentum), static_cast<T>(cfg.weight_decay));
      loss_sum += lv * static_cast<double>(batch->size());
      seen += batch->size();
    }
    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.train_loss = seen > 0 ? loss_sum / static_cast<double>(seen) : 0.0;
    stats.val_acc = evaluate(model, val);
    result.history.push_back(stats);
  }
  result.final_val_acc = result.history.empty() ? 0.0 : result.history.back().val_acc;

  if (!cfg.out_dir.empty()) {
    const std::string ckpt = cfg.out_dir + "/model_final.awck";
    save_checkpoint(ckpt, model, cfg, cfg.epochs, run_rng);
    result.checkpoint_path = ckpt;
    std::ofstream hist(cfg.out_dir + "/history.txt");
    if (!hist) throw FormatError("cannot write history to '" + cfg.out_dir + "'");
    for (const EpochStats& s : result.history) {
      char line[128];
      std::snprintf(line, sizeof(line), "epoch=%lld train_loss=%.9g val_acc=%.6g\n",
                    static_cast<long long>(s.epoch), s.train_loss, s.val_acc);
      hist << line;
    }
  }
  return result;
}

}  // namespace

TrainResult fit(const TrainConfig& cfg) {
  return cfg.dtype == DType::f32 ? fit_impl<float>(cfg) : fit_impl<double>(cfg);
}

// ---- checkpoint io ----

namespace {

constexpr char kMagic[4] = {'A', 'W', 'C', 'K'};
constexpr uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary), path_(path) {
    if (!out_) throw FormatError("cannot open '" + path + "' for writing");
  }
  void bytes(const void* p, size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  void u8(uint8_t v) { bytes(&v, 1); }
  void u32(uint32_t v) { bytes(&v, 4); }
  void u64(uint64_t v) { bytes(&v, 8); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void close() {
    out_.flush();
    if (!out_) throw FormatError("short write to '" + path_ + "'");
  }

 private:
  std::ofstream out_;
  std::string path_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw FormatError("cannot open '" + path + "'");
  }
  void bytes(void* p, size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in_.gcount()) != n) {
      throw FormatError("'" + path_ + "': unexpected end of file at byte offset " +
                        std::to_string(offset_ + static_cast<uint64_t>(in_.gcount())));
    }
    offset_ += n;
  }
  uint8_t u8() {
    uint8_t v;
    bytes(&v, 1);
    return v;
  }
  uint32_t u32() {
    uint32_t v;
    bytes(&v, 4);
    return v;
  }
  uint64_t u64() {
    uint64_t v;
    bytes(&v, 8);
    return v;
  }
  std::string str() {
    const uint64_t n = u64();
    if (n > (1ull << 32)) {
      throw FormatError("'" + path_ + "': implausible string length at byte offset " +
                        std::to_string(offset_));
    }
    std::string s(n, '\0');
    if (n > 0) bytes(s.data(), n);
    return s;
  }
  uint64_t offset() const { return offset_; }
  const std::string& path() const { return path_; }

 private:
  std::ifstream in_;
  std::string path_;
  uint64_t offset_ = 0;
};

struct Header {
  TrainConfig config;
  int64_t epoch = 0;
  DType dtype = DType::f32;
  std::string rng_state;
  uint64_t tensor_count = 0;
};

Header read_header(Reader& r) {
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("'" + r.path() + "': bad magic, not a checkpoint");
  }
  const uint32_t version = r.u32();
  if (version != kVersion) {
    throw FormatError("'" + r.path() + "': unsupported checkpoint version " +
                      std::to_string(version));
  }
  Header h;
  const uint8_t dtype_tag = r.u8();
  if (dtype_tag > 1) throw FormatError("'" + r.path() + "': bad dtype tag");
  h.dtype = static_cast<DType>(dtype_tag);
  h.epoch = static_cast<int64_t>(r.u64());
  const std::string config_echo = r.str();
  std::istringstream cfg_in(config_echo);
  std::string line;
  while (std::getline(cfg_in, line)) {
    const size_t eq = line.find('=');
    if (eq == std::string::npos || line.empty()) continue;
    h.config.set(line.substr(0, eq), line.substr(eq + 1));
  }
  h.rng_state = r.str();
  h.tensor_count = r.u64();
  return h;
}

template <typename T>
void write_tensor(Writer& w, const std::string& name, const Tensor<T>& t, bool is_buffer) {
  w.str(name);
  w.u8(static_cast<uint8_t>(dtype_of<T>::value));
  w.u8(is_buffer ? 1 : 0);
  w.u64(static_cast<uint64_t>(t.rank()));
  for (int64_t d = 0; d < t.rank(); ++d) w.u64(static_cast<uint64_t>(t.extent(d)));
  w.u64(static_cast<uint64_t>(t.numel() * static_cast<int64_t>(sizeof(T))));
  w.bytes(t.data(), static_cast<size_t>(t.numel()) * sizeof(T));
}

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path, const Model<T>& model, const TrainConfig& cfg,
                     int64_t epoch, const Rng& rng) {
  Writer w(path);
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u8(static_cast<uint8_t>(dtype_of<T>::value));
  w.u64(static_cast<uint64_t>(epoch));
  w.str(cfg.echo());
  w.str(rng.state());
  w.u64(model.params().size() + model.buffers().size());
  for (const auto& e : model.params()) write_tensor(w, e.name, e.value, false);
  for (const auto& e : model.buffers()) write_tensor(w, e.name, e.value, true);
  w.close();
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
  Reader r(path);
  const Header h = read_header(r);
  CheckpointInfo info;
  info.config = h.config;
  info.epoch = h.epoch;
  info.dtype = h.dtype;
  info.rng_state = h.rng_state;
  return info;
}

template <typename T>
void load_checkpoint(const std::string& path, Model<T>& model, CheckpointInfo* info) {
  Reader r(path);
  const Header h = read_header(r);
  if (h.dtype != dtype_of<T>::value) {
    throw FormatError("'" + path + "': checkpoint dtype " + dtype_name(h.dtype) +
                      " does not match model dtype " + dtype_name(dtype_of<T>::value));
  }
  size_t filled = 0;
  for (uint64_t i = 0; i < h.tensor_count; ++i) {
    const std::string name = r.str();
    const uint8_t dtype_tag = r.u8();
    const uint8_t is_buffer = r.u8();
    const uint64_t rank = r.u64();
    if (rank > 8) {
      throw FormatError("'" + path + "': implausible tensor rank at byte offset " +
                        std::to_string(r.offset()));
    }
    Shape shape(rank);
    for (uint64_t d = 0; d < rank; ++d) shape[d] = static_cast<int64_t>(r.u64());
    const uint64_t byte_len = r.u64();
    if (dtype_tag != static_cast<uint8_t>(dtype_of<T>::value)) {
      throw FormatError("'" + path + "': tensor '" + name + "' has dtype tag " +
                        std::to_string(dtype_tag));
    }
    auto* entry = is_buffer ? model.find_buffer(name) : model.find_param(name);
    if (entry == nullptr) {
      throw FormatError("'" + path + "': tensor '" + name + "' not found in model");
    }
    if (entry->value.shape() != shape) {
      throw FormatError("'" + path + "': tensor '" + name + "' shape " + shape_str(shape) +
                        " does not match model shape " + shape_str(entry->value.shape()));
    }
    if (byte_len != static_cast<uint64_t>(entry->value.numel()) * sizeof(T)) {
      throw FormatError("'" + path + "': tensor '" + name + "' payload length mismatch at byte offset " +
                        std::to_string(r.offset()));
    }
    r.bytes(entry->value.data(), static_cast<size_t>(byte_len));
    ++filled;
  }
  if (filled != model.params().size() + model.buffers().size()) {
    throw FormatError("'" + path + "': checkpoint holds " + std::to_string(filled) +
                      " tensors, model expects " +
                      std::to_string(model.params().size() + model.buffers().size()));
  }
  if (info != nullptr) {
    info->config = h.config;
    info->epoch = h.epoch;
    info->dtype = h.dtype;
    info->rng_state = h.rng_state;
  }
}

#define AWCONV_INSTANTIATE_TRAIN(T)                                                          \
  template void sgd_update<T>(Tensor<T>&, const Tensor<T>&, Tensor<T>&, T, T, T);             \
  template void sgd_step<T>(std::vector<typename Model<T>::Entry>&, std::span<const Node<T>>, \
                            std::vector<Tensor<T>>&, T, T, T);                               \
  template double evaluate<T>(Model<T>&, const Dataset&, int64_t);                           \
  template void save_checkpoint<T>(const std::string&, const Model<T>&, const TrainConfig&,  \
                                   int64_t, const Rng&);                                     \
  template void load_checkpoint<T>(const std::string&, Model<T>&, CheckpointInfo*);

AWCONV_INSTANTIATE_TRAIN(float)
AWCONV_INSTANTIATE_TRAIN(double)

}  // namespace awconv

#include "affes/model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "affes/errors.hpp"
#include "affes/random.hpp"

namespace affes {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRow = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapRow = Eigen::Map<const RowMat<T>>;
template <typename T>
using ConstMapVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using MapVec = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;

/// (channels*k*k, h*w) patch matrix for a same-padded stride-1 convolution.
template <typename T>
void im2col(const T* in, int channels, int h, int w, int k, RowMat<T>& cols) {
  const int pad = k / 2;
  cols.resize(channels * k * k, h * w);
  T* base = cols.data();
  for (int c = 0; c < channels; ++c) {
    const T* src = in + static_cast<std::ptrdiff_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = base + static_cast<std::ptrdiff_t>((c * k + ky) * k + kx) * h * w;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          T* row = dst + static_cast<std::ptrdiff_t>(y) * w;
          if (sy < 0 || sy >= h) {
            std::fill(row, row + w, T(0));
            continue;
          }
          const T* srow = src + static_cast<std::ptrdiff_t>(sy) * w;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - pad;
            row[x] = (sx >= 0 && sx < w) ? srow[sx] : T(0);
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters patch gradients back onto the input grid.
template <typename T>
void col2im_add(const RowMat<T>& dcols, int channels, int h, int w, int k, T* din) {
  const int pad = k / 2;
  const T* base = dcols.data();
  for (int c = 0; c < channels; ++c) {
    T* dst = din + static_cast<std::ptrdiff_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = base + static_cast<std::ptrdiff_t>((c * k + ky) * k + kx) * h * w;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          const T* row = src + static_cast<std::ptrdiff_t>(y) * w;
          T* drow = dst + static_cast<std::ptrdiff_t>(sy) * w;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - pad;
            if (sx >= 0 && sx < w) drow[sx] += row[x];
          }
        }
      }
    }
  }
}

/// 2x2 stride-2 max pool; the first maximum in raster order wins.
template <typename T>
void max_pool(const T* in, int channels, int h, int w, T* out, int* argmax) {
  const int oh = h / 2;
  const int ow = w / 2;
  for (int c = 0; c < channels; ++c) {
    const T* plane = in + static_cast<std::ptrdiff_t>(c) * h * w;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        int best = (2 * oy) * w + 2 * ox;
        const int candidates[3] = {best + 1, best + w, best + w + 1};
        for (int cand : candidates) {
          if (plane[cand] > plane[best]) best = cand;
        }
        const std::ptrdiff_t o = (static_cast<std::ptrdiff_t>(c) * oh + oy) * ow + ox;
        out[o] = plane[best];
        if (argmax) argmax[o] = c * h * w + best;
      }
    }
  }
}

template <typename T>
struct Views {
  ConstMapRow<T> w1, w2, w3, w4;
  ConstMapVec<T> b1, b2, b3, b4;
};

template <typename T>
Views<T> make_views(const Architecture& a, const std::vector<TensorSlice>& layout, const T* p) {
  auto mat = [&](int i, int rows) {
    return ConstMapRow<T>(p + layout[i].offset, rows, static_cast<Eigen::Index>(layout[i].size) / rows);
  };
  auto vec = [&](int i) {
    return ConstMapVec<T>(p + layout[i].offset, static_cast<Eigen::Index>(layout[i].size));
  };
  return {mat(0, a.conv1_filters), mat(2, a.conv2_filters), mat(4, a.fc_units), mat(6, a.classes),
          vec(1), vec(3), vec(5), vec(7)};
}

template <typename T>
double softmax_cross_entropy_row(const T* logits, int classes, int label, T* probs) {
  T max_logit = logits[0];
  for (int j = 1; j < classes; ++j) max_logit = std::max(max_logit, logits[j]);
  double sum = 0.0;
  for (int j = 0; j < classes; ++j) sum += std::exp(static_cast<double>(logits[j] - max_logit));
  if (probs) {
    for (int j = 0; j < classes; ++j) {
      probs[j] = static_cast<T>(std::exp(static_cast<double>(logits[j] - max_logit)) / sum);
    }
  }
  return std::log(sum) - static_cast<double>(logits[label] - max_logit);
}

}  // namespace

std::size_t Architecture::parameter_count() const {
  std::size_t total = 0;
  for (const auto& s : parameter_layout(*this)) total += s.size;
  return total;
}

std::vector<TensorSlice> parameter_layout(const Architecture& a) {
  const std::size_t k2 = static_cast<std::size_t>(a.kernel) * a.kernel;
  const std::size_t sizes[8] = {
      static_cast<std::size_t>(a.conv1_filters) * k2,
      static_cast<std::size_t>(a.conv1_filters),
      static_cast<std::size_t>(a.conv2_filters) * a.conv1_filters * k2,
      static_cast<std::size_t>(a.conv2_filters),
      static_cast<std::size_t>(a.fc_units) * a.flat_size(),
      static_cast<std::size_t>(a.fc_units),
      static_cast<std::size_t>(a.classes) * a.fc_units,
      static_cast<std::size_t>(a.classes)};
  const char* names[8] = {"conv1.w", "conv1.b", "conv2.w", "conv2.b",
                          "fc1.w",   "fc1.b",   "fc2.w",   "fc2.b"};
  std::vector<TensorSlice> layout;
  std::size_t offset = 0;
  for (int i = 0; i < 8; ++i) {
    layout.push_back({names[i], i < 4 ? LayerKind::conv : LayerKind::fc, i % 2 == 1, offset, sizes[i]});
    offset += sizes[i];
  }
  return layout;
}

template <typename T>
struct Cnn<T>::Trace {
  RowMat<T> cols1, a1, cols2, a2;
  std::vector<int> arg1, arg2;
};

template <typename T>
Cnn<T>::Cnn(const Architecture& arch) : arch_(arch), layout_(parameter_layout(arch)) {
  if (arch.input_height < 4 || arch.input_width < 4 || arch.conv1_filters < 1 ||
      arch.conv2_filters < 1 || arch.kernel < 1 || arch.kernel % 2 == 0 || arch.fc_units < 1 ||
      arch.classes < 2) {
    throw ConfigError("invalid CNN architecture");
  }
  params_.assign(arch.parameter_count(), T(0));
}

template <typename T>
void Cnn<T>::initialize(std::uint64_t seed) {
  Rng rng(seed);
  for (const auto& slice : layout_) {
    for (std::size_t i = 0; i < slice.size; ++i) {
      T& p = params_[slice.offset + i];
      if (slice.is_bias) {
        p = T(0.1);
        continue;
      }
      double v;
      do {
        v = rng.normal();
      } while (std::abs(v) > 2.0);
      p = static_cast<T>(0.1 * v);
    }
  }
}

template <typename T>
void Cnn<T>::forward_image(const Image& image, Trace* trace, std::vector<std::uint8_t>* pattern,
                           T* flat_out) const {
  if (image.height != arch_.input_height || image.width != arch_.input_width) {
    std::ostringstream msg;
    msg << "image is " << image.height << "x" << image.width << ", model expects "
        << arch_.input_height << "x" << arch_.input_width;
    throw ShapeError(msg.str());
  }
  const Views<T> v = make_views<T>(arch_, layout_, params_.data());
  const int h = arch_.input_height, w = arch_.input_width, k = arch_.kernel;
  const int h2 = arch_.pooled1_height(), w2 = arch_.pooled1_width();

  Trace local;
  Trace& t = trace ? *trace : local;

  if constexpr (std::is_same_v<T, float>) {
    im2col<T>(image.pixels.data(), 1, h, w, k, t.cols1);
  } else {
    std::vector<T> input(image.pixels.begin(), image.pixels.end());
    im2col<T>(input.data(), 1, h, w, k, t.cols1);
  }
  t.a1.noalias() = v.w1 * t.cols1;
  t.a1.colwise() += v.b1;
  t.a1 = t.a1.cwiseMax(T(0));

  std::vector<T> p1(static_cast<std::size_t>(arch_.conv1_filters) * h2 * w2);
  t.arg1.resize(p1.size());
  max_pool(t.a1.data(), arch_.conv1_filters, h, w, p1.data(), t.arg1.data());

  im2col<T>(p1.data(), arch_.conv1_filters, h2, w2, k, t.cols2);
  t.a2.noalias() = v.w2 * t.cols2;
  t.a2.colwise() += v.b2;
  t.a2 = t.a2.cwiseMax(T(0));

  t.arg2.resize(static_cast<std::size_t>(arch_.flat_size()));
  max_pool(t.a2.data(), arch_.conv2_filters, h2, w2, flat_out, t.arg2.data());

  if (pattern) {
    for (Eigen::Index i = 0; i < t.a1.size(); ++i) pattern->push_back(t.a1.data()[i] > T(0));
    for (int a : t.arg1) pattern->push_back(static_cast<std::uint8_t>(a % 251));
    for (Eigen::Index i = 0; i < t.a2.size(); ++i) pattern->push_back(t.a2.data()[i] > T(0));
    for (int a : t.arg2) pattern->push_back(static_cast<std::uint8_t>(a % 251));
  }
}

template <typename T>
std::vector<T> Cnn<T>::forward(std::span<const Image> batch) const {
  const auto n = static_cast<Eigen::Index>(batch.size());
  if (n == 0) return {};
  const Views<T> v = make_views<T>(arch_, layout_, params_.data());
  RowMat<T> x(n, arch_.flat_size());
  for (Eigen::Index i = 0; i < n; ++i) forward_image(batch[static_cast<std::size_t>(i)], nullptr, nullptr, x.row(i).data());
  RowMat<T> hidden = x * v.w3.transpose();
  hidden.rowwise() += v.b3.transpose();
  hidden = hidden.cwiseMax(T(0));
  RowMat<T> out = hidden * v.w4.transpose();
  out.rowwise() += v.b4.transpose();
  return std::vector<T>(out.data(), out.data() + out.size());
}

template <typename T>
double Cnn<T>::loss(std::span<const Image> batch, std::span<const int> labels) const {
  const std::vector<T> logits = forward(batch);
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    total += softmax_cross_entropy_row<T>(logits.data() + i * arch_.classes, arch_.classes, labels[i], nullptr);
  }
  return total / static_cast<double>(batch.size());
}

template <typename T>
std::vector<std::uint8_t> Cnn<T>::activation_pattern(std::span<const Image> batch) const {
  std::vector<std::uint8_t> pattern;
  const Views<T> v = make_views<T>(arch_, layout_, params_.data());
  std::vector<T> flat(static_cast<std::size_t>(arch_.flat_size()));
  for (const Image& img : batch) {
    forward_image(img, nullptr, &pattern, flat.data());
    ConstMapVec<T> x(flat.data(), arch_.flat_size());
    const Eigen::Matrix<T, Eigen::Dynamic, 1> hidden = v.w3 * x + v.b3;
    for (Eigen::Index i = 0; i < hidden.size(); ++i) pattern.push_back(hidden[i] > T(0));
  }
  return pattern;
}

template <typename T>
double Cnn<T>::loss_and_gradient(std::span<const Image> batch, std::span<const int> labels,
                                 std::span<T> grad_out) const {
  if (grad_out.size() != params_.size()) throw ShapeError("gradient buffer has the wrong size");
  if (labels.size() != batch.size()) throw ShapeError("label count does not match batch");
  const auto n = static_cast<Eigen::Index>(batch.size());
  std::fill(grad_out.begin(), grad_out.end(), T(0));
  if (n == 0) return 0.0;
  std::vector<T, Eigen::aligned_allocator<T>> grad(params_.size(), T(0));

  const Architecture& a = arch_;
  const Views<T> v = make_views<T>(a, layout_, params_.data());
  const int h = a.input_height, w = a.input_width, k = a.kernel;
  const int h2 = a.pooled1_height(), w2 = a.pooled1_width();

  std::vector<Trace> traces(static_cast<std::size_t>(n));
  RowMat<T> x(n, a.flat_size());
  for (Eigen::Index i = 0; i < n; ++i) {
    forward_image(batch[static_cast<std::size_t>(i)], &traces[static_cast<std::size_t>(i)], nullptr, x.row(i).data());
  }
  RowMat<T> hidden = x * v.w3.transpose();
  hidden.rowwise() += v.b3.transpose();
  hidden = hidden.cwiseMax(T(0));
  RowMat<T> logits = hidden * v.w4.transpose();
  logits.rowwise() += v.b4.transpose();

  // d(mean loss)/d(logits) = (softmax - onehot) / n.
  RowMat<T> dlogits(n, a.classes);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    total += softmax_cross_entropy_row<T>(logits.row(i).data(), a.classes, label, dlogits.row(i).data());
    dlogits(i, label) -= T(1);
  }
  dlogits /= static_cast<T>(n);

  auto grad_mat = [&](int idx, int rows) {
    return MapRow<T>(grad.data() + layout_[idx].offset, rows,
                     static_cast<Eigen::Index>(layout_[idx].size) / rows);
  };
  auto grad_vec = [&](int idx) {
    return MapVec<T>(grad.data() + layout_[idx].offset, static_cast<Eigen::Index>(layout_[idx].size));
  };

  grad_mat(6, a.classes).noalias() = dlogits.transpose() * hidden;
  grad_vec(7) = dlogits.colwise().sum().transpose();

  RowMat<T> dhidden = dlogits * v.w4;
  dhidden = dhidden.cwiseProduct((hidden.array() > T(0)).template cast<T>().matrix());
  grad_mat(4, a.fc_units).noalias() = dhidden.transpose() * x;
  grad_vec(5) = dhidden.colwise().sum().transpose();

  const RowMat<T> dx = dhidden * v.w3;

  MapRow<T> gw2 = grad_mat(2, a.conv2_filters);
  MapVec<T> gb2 = grad_vec(3);
  MapRow<T> gw1 = grad_mat(0, a.conv1_filters);
  MapVec<T> gb1 = grad_vec(1);

  RowMat<T> dz2, dcols2, dz1;
  std::vector<T> dp1;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Trace& t = traces[static_cast<std::size_t>(i)];
    dz2.setZero(a.conv2_filters, h2 * w2);
    for (int j = 0; j < a.flat_size(); ++j) dz2.data()[t.arg2[static_cast<std::size_t>(j)]] += dx(i, j);
    dz2 = dz2.cwiseProduct((t.a2.array() > T(0)).template cast<T>().matrix());
    gw2.noalias() += dz2 * t.cols2.transpose();
    gb2 += dz2.rowwise().sum();

    dcols2.noalias() = v.w2.transpose() * dz2;
    dp1.assign(static_cast<std::size_t>(a.conv1_filters) * h2 * w2, T(0));
    col2im_add<T>(dcols2, a.conv1_filters, h2, w2, k, dp1.data());

    dz1.setZero(a.conv1_filters, h * w);
    for (std::size_t j = 0; j < dp1.size(); ++j) dz1.data()[t.arg1[j]] += dp1[j];
    dz1 = dz1.cwiseProduct((t.a1.array() > T(0)).template cast<T>().matrix());
    gw1.noalias() += dz1 * t.cols1.transpose();
    gb1 += dz1.rowwise().sum();
  }
  std::copy(grad.begin(), grad.end(), grad_out.begin());
  return total / static_cast<double>(n);
}

template class Cnn<float>;
template class Cnn<double>;

CnnClassifier::CnnClassifier(std::shared_ptr<const Cnn<float>> model) : model_(std::move(model)) {
  if (model_->architecture().classes != kNumClasses) {
    throw ConfigError("classifier adapter needs a 10-class model");
  }
}

std::vector<Logits> CnnClassifier::logits(std::span<const Image> batch) const {
  const std::vector<float> flat = model_->forward(batch);
  std::vector<Logits> out(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(i * kNumClasses), kNumClasses, out[i].begin());
  }
  return out;
}

double train_step(Cnn<float>& model, OptimizerState& opt, std::span<const Image> batch,
                  std::span<const int> labels, const TrainConfig& cfg) {
  std::span<float> params = model.parameters();
  std::vector<float> grad(params.size());
  const double loss = model.loss_and_gradient(batch, labels, grad);
  const bool grad_finite = std::all_of(grad.begin(), grad.end(), [](float g) { return std::isfinite(g); });
  if (!std::isfinite(loss) || !grad_finite) {
    std::ostringstream msg;
    msg << "training diverged: loss = " << loss << " at optimizer step " << opt.step
        << " (batch of " << batch.size() << ", learning rate " << cfg.learning_rate << ")";
    throw DivergenceError(msg.str());
  }

  const auto lr = static_cast<float>(cfg.learning_rate);
  if (cfg.optimizer == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
    ++opt.step;
    return loss;
  }

  constexpr float beta1 = 0.9f, beta2 = 0.999f, eps = 1e-8f;
  if (opt.first_moment.size() != params.size()) {
    opt.first_moment.assign(params.size(), 0.0f);
    opt.second_moment.assign(params.size(), 0.0f);
  }
  ++opt.step;
  const auto t = static_cast<double>(opt.step);
  const auto bias1 = static_cast<float>(1.0 - std::pow(0.9, t));
  const auto bias2 = static_cast<float>(1.0 - std::pow(0.999, t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const float g = grad[i];
    float& m = opt.first_moment[i];
    float& v = opt.second_moment[i];
    m = beta1 * m + (1.0f - beta1) * g;
    v = beta2 * v + (1.0f - beta2) * g * g;
    params[i] -= lr * (m / bias1) / (std::sqrt(v / bias2) + eps);
  }
  return loss;
}

namespace {

constexpr char kCheckpointMagic[8] = {'A', 'F', 'E', 'S', 'C', 'N', 'N', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename U>
void put_le(std::ostream& out, U value) {
  unsigned char bytes[sizeof(U)];
  std::memcpy(bytes, &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U get_le(std::istream& in, const std::filesystem::path& path) {
  unsigned char bytes[sizeof(U)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(U));
  if (!in) throw CheckpointError("truncated checkpoint " + path.string());
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  U value;
  std::memcpy(&value, bytes, sizeof(U));
  return value;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Cnn<float>& model, std::uint64_t seed) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const Architecture& a = model.architecture();
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  for (int c : {a.input_height, a.input_width, a.conv1_filters, a.conv2_filters, a.kernel,
                a.fc_units, a.classes}) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c));
  }
  put_le<std::uint64_t>(out, seed);
  put_le<std::uint64_t>(out, model.parameters().size());
  for (float p : model.parameters()) put_le<float>(out, p);
  if (!out) throw IoError("write failed for " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const Architecture& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw CheckpointError("not a checkpoint file: " + path.string());
  }
  if (get_le<std::uint32_t>(in, path) != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version in " + path.string());
  }
  Architecture stored;
  int* fields[7] = {&stored.input_height, &stored.input_width, &stored.conv1_filters,
                    &stored.conv2_filters, &stored.kernel, &stored.fc_units, &stored.classes};
  for (int* f : fields) *f = static_cast<int>(get_le<std::uint32_t>(in, path));
  if (!(stored == expected)) {
    std::ostringstream msg;
    msg << "checkpoint architecture mismatch: file has conv " << stored.conv1_filters << "/"
        << stored.conv2_filters << ", fc " << stored.fc_units << ", expected conv "
        << expected.conv1_filters << "/" << expected.conv2_filters << ", fc " << expected.fc_units;
    throw CheckpointError(msg.str());
  }
  LoadedCheckpoint out;
  out.seed = get_le<std::uint64_t>(in, path);
  const auto count = get_le<std::uint64_t>(in, path);
  out.model = std::make_shared<Cnn<float>>(stored);
  if (count != out.model->parameters().size()) {
    throw CheckpointError("checkpoint parameter count does not match its architecture");
  }
  for (float& p : out.model->parameters()) p = get_le<float>(in, path);
  return out;
}

}  // namespace affes

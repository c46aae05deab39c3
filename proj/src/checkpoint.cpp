#include "u3ds3/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "u3ds3/trainer.hpp"

namespace u3ds3 {

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::u64: return 8;
    case DType::i32: return 4;
    case DType::u8: return 1;
  }
  throw std::runtime_error("dtype_size: unknown dtype");
}

std::uint64_t BlobEntry::elem_count() const {
  std::uint64_t n = 1;
  for (std::uint64_t d : shape) n *= d;
  return n;
}

bool Blob::has(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return true;
  return false;
}

const BlobEntry& Blob::require(const std::string& name, DType dtype) const {
  for (const auto& e : entries) {
    if (e.name != name) continue;
    if (e.dtype != dtype)
      throw std::runtime_error("blob: entry '" + name + "' has unexpected dtype");
    if (e.data.size() != e.elem_count() * dtype_size(e.dtype))
      throw std::runtime_error("blob: entry '" + name + "' has inconsistent size");
    return e;
  }
  throw std::runtime_error("blob: missing entry '" + name + "'");
}

namespace {

template <typename T>
void add_typed(Blob& blob, const std::string& name, std::vector<std::uint64_t> shape,
               const T* data, DType dtype) {
  BlobEntry e;
  e.name = name;
  e.dtype = dtype;
  e.shape = std::move(shape);
  e.data.resize(e.elem_count() * sizeof(T));
  if (!e.data.empty()) std::memcpy(e.data.data(), data, e.data.size());
  blob.entries.push_back(std::move(e));
}

template <typename T>
std::vector<T> get_typed(const Blob& blob, const std::string& name, DType dtype) {
  const BlobEntry& e = blob.require(name, dtype);
  std::vector<T> out(e.elem_count());
  if (!out.empty()) std::memcpy(out.data(), e.data.data(), e.data.size());
  return out;
}

template <typename T>
void write_raw(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& is, const std::string& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("blob: truncated file " + path);
  return v;
}

}  // namespace

void Blob::add_f32(const std::string& name, std::vector<std::uint64_t> shape, const float* data) {
  add_typed(*this, name, std::move(shape), data, DType::f32);
}
void Blob::add_f64(const std::string& name, std::vector<std::uint64_t> shape, const double* data) {
  add_typed(*this, name, std::move(shape), data, DType::f64);
}
void Blob::add_u64(const std::string& name, std::vector<std::uint64_t> shape, const std::uint64_t* data) {
  add_typed(*this, name, std::move(shape), data, DType::u64);
}
void Blob::add_i32(const std::string& name, std::vector<std::uint64_t> shape, const std::int32_t* data) {
  add_typed(*this, name, std::move(shape), data, DType::i32);
}
void Blob::add_text(const std::string& name, const std::string& text) {
  BlobEntry e;
  e.name = name;
  e.dtype = DType::u8;
  e.shape = {text.size()};
  e.data.assign(text.begin(), text.end());
  entries.push_back(std::move(e));
}

std::vector<float> Blob::get_f32(const std::string& name) const {
  return get_typed<float>(*this, name, DType::f32);
}
std::vector<double> Blob::get_f64(const std::string& name) const {
  return get_typed<double>(*this, name, DType::f64);
}
std::vector<std::uint64_t> Blob::get_u64(const std::string& name) const {
  return get_typed<std::uint64_t>(*this, name, DType::u64);
}
std::vector<std::int32_t> Blob::get_i32(const std::string& name) const {
  return get_typed<std::int32_t>(*this, name, DType::i32);
}
std::string Blob::get_text(const std::string& name) const {
  const BlobEntry& e = require(name, DType::u8);
  return std::string(e.data.begin(), e.data.end());
}
std::uint64_t Blob::get_scalar_u64(const std::string& name) const {
  std::vector<std::uint64_t> v = get_u64(name);
  if (v.size() != 1) throw std::runtime_error("blob: entry '" + name + "' is not a scalar");
  return v[0];
}

void save_blob(const std::string& path, const Blob& blob, std::uint32_t magic) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("blob: cannot open " + path + " for writing");
  write_raw(os, magic);
  write_raw(os, std::uint32_t{1});
  write_raw(os, static_cast<std::uint64_t>(blob.entries.size()));
  for (const auto& e : blob.entries) {
    write_raw(os, static_cast<std::uint64_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    write_raw(os, static_cast<std::uint8_t>(e.dtype));
    write_raw(os, static_cast<std::uint8_t>(e.shape.size()));
    for (std::uint64_t d : e.shape) write_raw(os, d);
    write_raw(os, static_cast<std::uint64_t>(e.data.size()));
    os.write(reinterpret_cast<const char*>(e.data.data()),
             static_cast<std::streamsize>(e.data.size()));
  }
  if (!os) throw std::runtime_error("blob: write failed for " + path);
}

Blob load_blob(const std::string& path, std::uint32_t expected_magic) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("blob: cannot open " + path);
  auto magic = read_raw<std::uint32_t>(is, path);
  if (magic != expected_magic)
    throw std::runtime_error("blob: " + path + " has wrong magic (not this file type)");
  auto version = read_raw<std::uint32_t>(is, path);
  if (version != 1)
    throw std::runtime_error("blob: " + path + " has unsupported version " +
                             std::to_string(version));
  auto count = read_raw<std::uint64_t>(is, path);
  Blob blob;
  blob.entries.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    BlobEntry e;
    auto name_len = read_raw<std::uint64_t>(is, path);
    if (name_len > 4096) throw std::runtime_error("blob: absurd entry name length in " + path);
    e.name.resize(name_len);
    is.read(e.name.data(), static_cast<std::streamsize>(name_len));
    auto dtype = read_raw<std::uint8_t>(is, path);
    if (dtype > 4) throw std::runtime_error("blob: unknown dtype in " + path);
    e.dtype = static_cast<DType>(dtype);
    auto ndim = read_raw<std::uint8_t>(is, path);
    e.shape.resize(ndim);
    for (auto& d : e.shape) d = read_raw<std::uint64_t>(is, path);
    auto bytes = read_raw<std::uint64_t>(is, path);
    if (bytes != e.elem_count() * dtype_size(e.dtype))
      throw std::runtime_error("blob: entry '" + e.name + "' size mismatch in " + path);
    e.data.resize(bytes);
    is.read(reinterpret_cast<char*>(e.data.data()), static_cast<std::streamsize>(bytes));
    if (!is) throw std::runtime_error("blob: truncated file " + path);
    blob.entries.push_back(std::move(e));
  }
  return blob;
}

void save_blocks_file(const std::string& path, const std::vector<Block>& blocks) {
  Blob blob;
  std::uint64_t count = blocks.size();
  blob.add_u64("count", {1}, &count);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const Block& b = blocks[i];
    std::string prefix = "block" + std::to_string(i);
    std::vector<std::uint64_t> idx(b.point_indices.begin(), b.point_indices.end());
    blob.add_u64(prefix + ".indices", {idx.size()}, idx.data());
    blob.add_f64(prefix + ".features", {b.size(), Block::kDim}, b.features.data());
  }
  save_blob(path, blob, kBlocksMagic);
}

std::vector<Block> load_blocks_file(const std::string& path) {
  Blob blob = load_blob(path, kBlocksMagic);
  std::uint64_t count = blob.get_scalar_u64("count");
  std::vector<Block> blocks(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string prefix = "block" + std::to_string(i);
    std::vector<std::uint64_t> idx = blob.get_u64(prefix + ".indices");
    Block& b = blocks[i];
    b.point_indices.assign(idx.begin(), idx.end());
    b.features = blob.get_f64(prefix + ".features");
    if (b.features.size() != b.point_indices.size() * Block::kDim)
      throw std::runtime_error("blocks file: feature shape mismatch in " + path);
  }
  return blocks;
}

namespace {

std::string layer_name(std::size_t i, const char* field) {
  return "layer" + std::to_string(i) + "." + field;
}

std::string centroid_name(int p, const char* field) {
  return "centroids" + std::to_string(p + 1) + "." + field;
}

}  // namespace

void save_checkpoint(const std::string& path, const TrainState& state) {
  Blob blob;
  blob.add_text("config", dump_config(state.config));
  std::uint64_t epoch = state.epoch;
  blob.add_u64("epoch", {1}, &epoch);
  std::uint64_t ready = state.centroids_ready ? 1 : 0;
  blob.add_u64("centroids_ready", {1}, &ready);

  for (std::size_t i = 0; i < state.net.layers.size(); ++i) {
    const ConvLayer<float>& l = state.net.layers[i];
    blob.add_f32(layer_name(i, "w"), {l.w.size()}, l.w.data());
    blob.add_f32(layer_name(i, "b"), {l.b.size()}, l.b.data());
    if (l.spec.norm) {
      blob.add_f32(layer_name(i, "gamma"), {l.gamma.size()}, l.gamma.data());
      blob.add_f32(layer_name(i, "beta"), {l.beta.size()}, l.beta.data());
      blob.add_f32(layer_name(i, "run_mean"), {l.run_mean.size()}, l.run_mean.data());
      blob.add_f32(layer_name(i, "run_var"), {l.run_var.size()}, l.run_var.data());
    }
  }

  for (int p = 0; p < 2; ++p) {
    const CentroidSet& c = state.centroids[p];
    std::uint64_t shape[2] = {static_cast<std::uint64_t>(c.k),
                              static_cast<std::uint64_t>(c.dim)};
    blob.add_f64(centroid_name(p, "mu"), {shape[0], shape[1]}, c.mu.data());
    blob.add_u64(centroid_name(p, "counts"), {c.counts.size()}, c.counts.data());
    blob.add_u64(centroid_name(p, "hist"), {state.hist[p].size()}, state.hist[p].data());
    blob.add_f64(centroid_name(p, "weights"), {state.weights[p].size()},
                 state.weights[p].data());
  }
  save_blob(path, blob, kCheckpointMagic);
}

TrainState load_checkpoint(const std::string& path) {
  Blob blob = load_blob(path, kCheckpointMagic);
  TrainState st;

  // Parse the config snapshot back through the normal entry parser.
  {
    std::string text = blob.get_text("config");
    std::size_t pos = 0;
    while (pos < text.size()) {
      std::size_t nl = text.find('\n', pos);
      if (nl == std::string::npos) nl = text.size();
      std::string line = text.substr(pos, nl - pos);
      pos = nl + 1;
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto trim = [](std::string s) {
        std::size_t a = s.find_first_not_of(" \t");
        std::size_t b = s.find_last_not_of(" \t");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
      };
      apply_config_entry(st.config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }
  st.config.validate();
  st.epoch = blob.get_scalar_u64("epoch");
  st.centroids_ready = blob.get_scalar_u64("centroids_ready") != 0;

  std::vector<LayerSpec> plan = feature_net_plan();
  st.net.layers.resize(plan.size());
  for (std::size_t i = 0; i < plan.size(); ++i) {
    ConvLayer<float>& l = st.net.layers[i];
    l.spec = plan[i];
    l.w = blob.get_f32(layer_name(i, "w"));
    l.b = blob.get_f32(layer_name(i, "b"));
    std::size_t ws = static_cast<std::size_t>(l.spec.kernel) * l.spec.kernel *
                     l.spec.kernel * l.spec.in_ch * l.spec.out_ch;
    if (l.w.size() != ws || l.b.size() != static_cast<std::size_t>(l.spec.out_ch))
      throw std::runtime_error("checkpoint: layer " + std::to_string(i) + " shape mismatch");
    if (l.spec.norm) {
      l.gamma = blob.get_f32(layer_name(i, "gamma"));
      l.beta = blob.get_f32(layer_name(i, "beta"));
      l.run_mean = blob.get_f32(layer_name(i, "run_mean"));
      l.run_var = blob.get_f32(layer_name(i, "run_var"));
      std::size_t oc = static_cast<std::size_t>(l.spec.out_ch);
      if (l.gamma.size() != oc || l.beta.size() != oc || l.run_mean.size() != oc ||
          l.run_var.size() != oc)
        throw std::runtime_error("checkpoint: layer " + std::to_string(i) +
                                 " normalization shape mismatch");
    }
  }

  for (int p = 0; p < 2; ++p) {
    const BlobEntry& mu = blob.require(centroid_name(p, "mu"), DType::f64);
    if (mu.shape.size() != 2)
      throw std::runtime_error("checkpoint: centroid matrix must be 2-D");
    CentroidSet c(static_cast<int>(mu.shape[0]), static_cast<int>(mu.shape[1]), p + 1);
    c.mu = blob.get_f64(centroid_name(p, "mu"));
    c.counts = blob.get_u64(centroid_name(p, "counts"));
    if (c.counts.size() != static_cast<std::size_t>(c.k))
      throw std::runtime_error("checkpoint: centroid counts shape mismatch");
    st.centroids[p] = std::move(c);
    st.hist[p] = blob.get_u64(centroid_name(p, "hist"));
    st.weights[p] = blob.get_f64(centroid_name(p, "weights"));
  }
  return st;
}

}  // namespace u3ds3

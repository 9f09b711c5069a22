#include "mdepth/checkpoint.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include "mdepth/ndtf.hpp"

namespace mdepth {

namespace fs = std::filesystem;

std::size_t Checkpoint::n_scales() const {
  std::size_t n = 0;
  for (const auto& [name, t] : parameters)
    if (name.starts_with("depth.enc") && name.ends_with(".weight")) ++n;
  return n;
}

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  os.write("NDCK", 4);
  io::write_u32(os, Checkpoint::kVersion);
  io::write_u32(os, static_cast<std::uint32_t>(ckpt.parameters.size()));
  for (const auto& [name, t] : ckpt.parameters) {
    io::write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_ndtf(os, t);
  }
  io::write_u64(os, ckpt.step);
  io::write_u64(os, ckpt.config_hash);
  if (!os) throw std::runtime_error("write_checkpoint: stream failure");
}

Checkpoint read_checkpoint(std::istream& is) {
  io::expect_magic(is, "NDCK", "checkpoint");
  const auto version = io::read_u32(is);
  if (version != Checkpoint::kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto n = io::read_u32(is);
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto len = io::read_u32(is);
    if (len > 4096) throw std::runtime_error("checkpoint: implausible parameter name length");
    std::string name(len, '\0');
    is.read(name.data(), len);
    if (static_cast<std::uint32_t>(is.gcount()) != len) throw std::runtime_error("checkpoint: truncated name");
    if (!seen.insert(name).second) throw std::runtime_error("checkpoint: duplicate parameter '" + name + "'");
    ckpt.parameters.emplace_back(std::move(name), read_ndtf<float>(is));
  }
  ckpt.step = io::read_u64(is);
  ckpt.config_hash = io::read_u64(is);
  return ckpt;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error(path.string() + ": cannot open for writing");
  write_checkpoint(os, ckpt);
  os.close();
  if (!os) throw std::runtime_error(path.string() + ": write failed");
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error(path.string() + ": cannot open");
  try {
    return read_checkpoint(is);
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

template <typename T>
Checkpoint make_checkpoint(Model<T>& model, std::uint64_t step, std::uint64_t config_hash) {
  Checkpoint ckpt;
  ckpt.step = step;
  ckpt.config_hash = config_hash;
  for (auto& [name, p] : model.parameters()) {
    const auto v = p->values();
    ckpt.parameters.emplace_back(name, Tensor<float>::from_data(p->shape(), std::vector<float>(v.begin(), v.end())));
  }
  return ckpt;
}

template <typename T>
void restore_parameters(Model<T>& model, const Checkpoint& ckpt) {
  auto params = model.parameters();
  if (params.size() != ckpt.parameters.size()) {
    throw std::runtime_error("checkpoint: " + std::to_string(ckpt.parameters.size()) + " parameters, model has " +
                             std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, stored] = ckpt.parameters[i];
    auto& [model_name, p] = params[i];
    if (name != model_name) throw std::runtime_error("checkpoint: expected '" + model_name + "', found '" + name + "'");
    if (stored.shape() != p->shape()) {
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "': " + shape_to_string(stored.shape()) +
                               " vs " + shape_to_string(p->shape()));
    }
    auto dst = p->mutable_values();
    const auto src = stored.values();
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] = static_cast<T>(src[j]);
  }
}

template Checkpoint make_checkpoint(Model<float>&, std::uint64_t, std::uint64_t);
template Checkpoint make_checkpoint(Model<double>&, std::uint64_t, std::uint64_t);
template void restore_parameters(Model<float>&, const Checkpoint&);
template void restore_parameters(Model<double>&, const Checkpoint&);

}  // namespace mdepth

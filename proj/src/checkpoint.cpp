#include "momentdet/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace momentdet {

namespace {

constexpr char kMagic[8] = {'M', 'D', 'E', 'T', 'C', 'K', 'P', '1'};

void write_u64(std::ostream& out, uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), 8);
}

uint64_t read_u64(std::istream& in, const std::string& what) {
  uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  if (!in) throw std::runtime_error("checkpoint: truncated while reading " + what);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& config_echo,
                     const ParamStore& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(kMagic, 8);
  const std::string cfg = config_echo.dump();
  write_u64(out, cfg.size());
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  write_u64(out, params.size());
  for (const auto& [name, var] : params.items()) {
    write_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(out, static_cast<uint64_t>(var->rows()));
    write_u64(out, static_cast<uint64_t>(var->cols()));
    // Eigen is column-major; serialize row-major for readability elsewhere.
    for (Eigen::Index r = 0; r < var->rows(); ++r) {
      out.write(reinterpret_cast<const char*>(var->value.row(r).eval().data()),
                static_cast<std::streamsize>(sizeof(double)) * var->cols());
    }
  }
  if (!out) throw std::runtime_error("failed while writing checkpoint " + path.string());
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("checkpoint " + path.string() + ": bad magic or unsupported version");
  }
  const uint64_t cfg_len = read_u64(in, "config length");
  std::string cfg(cfg_len, '\0');
  in.read(cfg.data(), static_cast<std::streamsize>(cfg_len));
  if (!in) throw std::runtime_error("checkpoint " + path.string() + ": truncated config");

  CheckpointData data;
  data.config = nlohmann::json::parse(cfg);
  const uint64_t count = read_u64(in, "parameter count");
  for (uint64_t i = 0; i < count; ++i) {
    const uint64_t name_len = read_u64(in, "parameter name length");
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    const uint64_t rows = read_u64(in, "rows of " + name);
    const uint64_t cols = read_u64(in, "cols of " + name);
    Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (uint64_t r = 0; r < rows; ++r) {
      Eigen::VectorXd row(static_cast<Eigen::Index>(cols));
      in.read(reinterpret_cast<char*>(row.data()),
              static_cast<std::streamsize>(sizeof(double) * cols));
      m.row(static_cast<Eigen::Index>(r)) = row;
    }
    if (!in) throw std::runtime_error("checkpoint " + path.string() + ": truncated at " + name);
    data.params.emplace(std::move(name), std::move(m));
  }
  return data;
}

void load_into(Model& model, const std::map<std::string, Mat>& params) {
  const auto& items = model.params().items();
  if (params.size() != items.size()) {
    throw std::runtime_error("checkpoint holds " + std::to_string(params.size()) +
                             " parameters but the model has " + std::to_string(items.size()));
  }
  for (const auto& [name, var] : items) {
    auto it = params.find(name);
    if (it == params.end()) throw std::runtime_error("checkpoint is missing parameter " + name);
    if (it->second.rows() != var->rows() || it->second.cols() != var->cols()) {
      throw std::runtime_error("checkpoint parameter " + name + " has shape " +
                               std::to_string(it->second.rows()) + "x" +
                               std::to_string(it->second.cols()) + ", expected " +
                               std::to_string(var->rows()) + "x" + std::to_string(var->cols()));
    }
    var->value = it->second;
  }
}

}  // namespace momentdet

#include "cvcrf/checkpoint.hpp"

#include "cvcrf/binary_io.hpp"

namespace cvcrf {

namespace {

constexpr char kMagic[9] = "CVCRFCK1";
constexpr char kEndMagic[9] = "CVCRFEND";

struct Header {
  std::string config_text;
  std::uint64_t epoch = 0;
  std::uint64_t seed = 0;
};

Header read_header(io::BinaryReader& in) {
  in.expect_magic(kMagic);
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw io::IoError("unsupported checkpoint version " + std::to_string(version) + " in " + in.path());
  }
  Header h;
  h.config_text = in.get_string();
  h.epoch = in.get<std::uint64_t>();
  h.seed = in.get<std::uint64_t>();
  return h;
}

ClassCenters read_centers(io::BinaryReader& in) {
  ClassCenters c;
  c.num_classes = in.get<std::uint32_t>();
  c.dim = in.get<std::uint32_t>();
  c.mu_long = in.get_vector<double>(c.num_classes * c.dim);
  c.mu_trans = in.get_vector<double>(c.num_classes * c.dim);
  return c;
}

}  // namespace

void write_checkpoint(const std::string& path, const Trainer& trainer) {
  io::BinaryWriter out(path);
  out.put_magic(kMagic);
  out.put<std::uint32_t>(kCheckpointVersion);
  out.put_string(trainer.config().to_text());
  out.put<std::uint64_t>(trainer.epoch());
  out.put<std::uint64_t>(trainer.config().seed);

  const MemoryBank& bank = trainer.bank();
  const ClassCenters centers = bank.class_centers();
  out.put<std::uint32_t>(static_cast<std::uint32_t>(centers.num_classes));
  out.put<std::uint32_t>(static_cast<std::uint32_t>(centers.dim));
  out.put_span<double>(centers.mu_long);
  out.put_span<double>(centers.mu_trans);

  const auto& params = trainer.model().parameters().all();
  out.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    out.put_string(p.name);
    out.put<std::uint32_t>(static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t d : p.tensor.shape()) out.put<std::uint64_t>(d);
    out.put_span<double>(p.tensor.data());
  }

  const AdamW& opt = trainer.optimizer();
  out.put<std::uint64_t>(opt.steps());
  const auto& m = opt.first_moments();
  const auto& v = opt.second_moments();
  out.put<std::uint32_t>(static_cast<std::uint32_t>(m.size()));
  for (std::size_t i = 0; i < m.size(); ++i) {
    out.put<std::uint64_t>(m[i].size());
    out.put_span<double>(m[i]);
    out.put_span<double>(v[i]);
  }

  out.put<std::uint64_t>(bank.rows());
  out.put<std::uint32_t>(static_cast<std::uint32_t>(bank.dim()));
  out.put<double>(bank.alpha());
  out.put<double>(bank.tau());
  for (std::size_t r = 0; r < bank.rows(); ++r) {
    out.put<std::uint64_t>(bank.sample_indices()[r]);
    out.put<std::int32_t>(bank.labels()[r]);
  }
  out.put_span<double>(bank.m_long());
  out.put_span<double>(bank.m_trans());

  out.put<std::uint64_t>(trainer.config().seed);
  out.put<std::uint64_t>(trainer.epoch());
  out.put_magic(kEndMagic);
  out.finish();
}

std::unique_ptr<Trainer> read_checkpoint(const std::string& path) {
  io::BinaryReader in(path);
  const Header header = read_header(in);
  TrainConfig config;
  try {
    config = parse_config(header.config_text);
  } catch (const ConfigError& e) {
    throw io::IoError("corrupt config in " + path + ": " + e.what());
  }
  auto trainer = std::make_unique<Trainer>(config);
  read_centers(in);

  auto& params = trainer->model().parameters().all();
  const auto count = in.get<std::uint32_t>();
  if (count != params.size()) throw io::IoError("parameter count mismatch in " + path);
  TrainState state;
  for (auto& p : params) {
    const std::string name = in.get_string();
    if (name != p.name) throw io::IoError("expected parameter " + p.name + ", found " + name + " in " + path);
    const auto rank = in.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = in.get<std::uint64_t>();
    if (shape != p.tensor.shape()) throw io::IoError("shape mismatch for " + name + " in " + path);
    state.parameters.push_back(in.get_vector<double>(p.tensor.numel()));
  }

  state.optimizer_steps = in.get<std::uint64_t>();
  const auto moments = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < moments; ++i) {
    const auto n = in.get<std::uint64_t>();
    state.first_moments.push_back(in.get_vector<double>(n));
    state.second_moments.push_back(in.get_vector<double>(n));
  }

  const auto rows = in.get<std::uint64_t>();
  const auto dim = in.get<std::uint32_t>();
  const double alpha = in.get<double>();
  const double tau = in.get<double>();
  std::vector<std::size_t> indices(rows);
  std::vector<int> labels(rows);
  for (std::uint64_t r = 0; r < rows; ++r) {
    indices[r] = in.get<std::uint64_t>();
    labels[r] = in.get<std::int32_t>();
  }
  std::vector<double> m_long = in.get_vector<double>(rows * dim);
  std::vector<double> m_trans = in.get_vector<double>(rows * dim);
  state.bank.emplace(std::move(indices), std::move(labels), config.data.num_classes, dim, std::move(m_long),
                     std::move(m_trans), alpha, tau);

  in.get<std::uint64_t>();
  state.epoch = in.get<std::uint64_t>();
  in.expect_magic(kEndMagic);
  trainer->restore(state);
  return trainer;
}

ClassCenters read_checkpoint_centers(const std::string& path) {
  io::BinaryReader in(path);
  read_header(in);
  return read_centers(in);
}

std::string read_checkpoint_config(const std::string& path) {
  io::BinaryReader in(path);
  return read_header(in).config_text;
}

}  // namespace cvcrf

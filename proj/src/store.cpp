#include "mazelab/store.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace mazelab {

using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr std::array<char, 8> kMagic = {'M', 'Z', 'L', 'B', 'C', 'K', 'P', 'T'};
constexpr std::size_t kPreambleSize = 8 + 4 + 8 + 8 + 8;

template <class U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

template <class U>
U get(const char* p) {
  U v;
  std::memcpy(&v, p, sizeof(U));
  return v;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

json shape_json(const Shape& s) {
  json a = json::array();
  for (auto d : s) a.push_back(d);
  return a;
}

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

json to_json(const ModelConfig& c) {
  return json{{"d_model", c.d_model}, {"d_head", c.d_head}, {"n_layers", c.n_layers}, {"d_vocab", c.d_vocab},
              {"n_ctx", c.n_ctx},     {"seed", c.seed},     {"pad_id", c.pad_id}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.d_head = j.at("d_head").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.d_vocab = j.at("d_vocab").get<int>();
  c.n_ctx = j.at("n_ctx").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.pad_id = j.value("pad_id", static_cast<TokenId>(Special::pad));
  c.validate();
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const GptModel<float>& model, std::int64_t step,
                     const AdamWState<float>* optimizer, const json& meta) {
  std::vector<std::pair<std::string, const Tensor<float>*>> dir;
  model.weights.visit([&](const std::string& n, const Tensor<float>& t) { dir.emplace_back(n, &t); });
  const auto names = model.names();
  if (optimizer) {
    if (optimizer->m.size() != names.size()) throw CheckpointError("optimizer state does not match model");
    for (std::size_t i = 0; i < names.size(); ++i) dir.emplace_back("adamw.m/" + names[i], &optimizer->m[i]);
    for (std::size_t i = 0; i < names.size(); ++i) dir.emplace_back("adamw.v/" + names[i], &optimizer->v[i]);
  }
  json tensors = json::array();
  std::string payload;
  std::uint64_t offset = 0;
  for (const auto& [name, t] : dir) {
    const std::uint64_t nbytes = t->numel() * sizeof(float);
    tensors.push_back({{"name", name}, {"shape", shape_json(t->shape())}, {"offset", offset}, {"nbytes", nbytes}});
    payload.append(reinterpret_cast<const char*>(t->data()), nbytes);
    offset += nbytes;
  }
  json header{{"format_version", kCheckpointVersion},
              {"config", to_json(model.config)},
              {"step", step},
              {"tensors", tensors},
              {"meta", meta}};
  if (optimizer) {
    const auto& c = optimizer->config;
    header["optimizer"] = {{"step", optimizer->step},      {"lr", c.lr},   {"beta1", c.beta1}, {"beta2", c.beta2},
                           {"eps", c.eps}, {"weight_decay", c.weight_decay},
                           {"on_non_finite", c.on_non_finite == NonFinitePolicy::fail ? "fail" : "skip_step"}};
  } else {
    header["optimizer"] = nullptr;
  }
  const std::string hdr = header.dump();
  std::string bytes(kMagic.begin(), kMagic.end());
  put<std::uint32_t>(bytes, kCheckpointVersion);
  put<std::uint64_t>(bytes, hdr.size());
  put<std::uint64_t>(bytes, fnv1a64(hdr.data(), hdr.size()));
  put<std::uint64_t>(bytes, fnv1a64(payload.data(), payload.size()));
  bytes += hdr;
  bytes += payload;
  write_file(path, bytes);
}

namespace {

struct Parsed {
  json header;
  std::string_view payload;
};

Parsed parse_container(const std::string& bytes, const std::filesystem::path& path, bool need_payload) {
  if (bytes.size() < kPreambleSize) throw CheckpointTruncatedError(path.string() + ": file shorter than preamble");
  if (std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) {
    throw CheckpointError(path.string() + ": not a mazelab checkpoint (bad magic)");
  }
  const auto version = get<std::uint32_t>(bytes.data() + 8);
  if (version != kCheckpointVersion) {
    throw CheckpointVersionError(path.string() + ": checkpoint format version " + std::to_string(version) +
                                 ", expected " + std::to_string(kCheckpointVersion));
  }
  const auto hlen = get<std::uint64_t>(bytes.data() + 12);
  const auto hsum = get<std::uint64_t>(bytes.data() + 20);
  const auto psum = get<std::uint64_t>(bytes.data() + 28);
  if (hlen > bytes.size() - kPreambleSize) throw CheckpointTruncatedError(path.string() + ": header truncated");
  const char* hp = bytes.data() + kPreambleSize;
  if (fnv1a64(hp, hlen) != hsum) throw CheckpointError(path.string() + ": header checksum mismatch");
  Parsed out;
  try {
    out.header = json::parse(std::string_view(hp, hlen));
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": malformed header: " + e.what());
  }
  if (out.header.value("format_version", 0U) != kCheckpointVersion) {
    throw CheckpointVersionError(path.string() + ": header format_version mismatch");
  }
  out.payload = std::string_view(bytes).substr(kPreambleSize + hlen);
  if (need_payload && fnv1a64(out.payload.data(), out.payload.size()) != psum) {
    // Distinguish a short file from a corrupted one for the error message.
    std::uint64_t expected = 0;
    for (const auto& t : out.header.at("tensors")) expected += t.at("nbytes").get<std::uint64_t>();
    if (out.payload.size() < expected) throw CheckpointTruncatedError(path.string() + ": payload truncated");
    throw CheckpointError(path.string() + ": payload checksum mismatch");
  }
  return out;
}

}  // namespace

json read_checkpoint_header(const std::filesystem::path& path) {
  return parse_container(read_file(path), path, false).header;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const Parsed parsed = parse_container(bytes, path, true);
  const json& h = parsed.header;
  Checkpoint ck;
  try {
    ck.config = model_config_from_json(h.at("config"));
    ck.step = h.at("step").get<std::int64_t>();
    ck.meta = h.value("meta", json::object());
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": bad header field: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointShapeError(path.string() + ": invalid model config: " + e.what());
  }

  std::map<std::string, std::pair<Shape, std::pair<std::uint64_t, std::uint64_t>>> directory;
  std::uint64_t expect_offset = 0;
  for (const auto& t : h.at("tensors")) {
    const auto name = t.at("name").get<std::string>();
    const auto shape = t.at("shape").get<Shape>();
    const auto offset = t.at("offset").get<std::uint64_t>();
    const auto nbytes = t.at("nbytes").get<std::uint64_t>();
    if (offset != expect_offset || nbytes != shape_numel(shape) * sizeof(float)) {
      throw CheckpointError(path.string() + ": tensor directory entry '" + name + "' is not contiguous");
    }
    if (!directory.emplace(name, std::make_pair(shape, std::make_pair(offset, nbytes))).second) {
      throw CheckpointError(path.string() + ": tensor '" + name + "' listed twice");
    }
    expect_offset += nbytes;
  }
  if (parsed.payload.size() != expect_offset) {
    throw CheckpointTruncatedError(path.string() + ": payload holds " + std::to_string(parsed.payload.size()) +
                                   " bytes, directory expects " + std::to_string(expect_offset));
  }

  auto fill = [&](const std::string& name, Tensor<float>& dst) {
    const auto it = directory.find(name);
    if (it == directory.end()) throw CheckpointShapeError(path.string() + ": missing tensor '" + name + "'");
    if (it->second.first != dst.shape()) {
      throw CheckpointShapeError(path.string() + ": tensor '" + name + "' has shape " + shape_str(it->second.first) +
                                 ", config expects " + shape_str(dst.shape()));
    }
    std::memcpy(dst.data(), parsed.payload.data() + it->second.second.first, it->second.second.second);
    directory.erase(it);
  };

  ck.model = GptModel<float>::zeros(ck.config);
  ck.model.weights.visit([&](const std::string& n, Tensor<float>& t) { fill(n, t); });
  if (h.contains("optimizer") && !h.at("optimizer").is_null()) {
    const auto& o = h.at("optimizer");
    AdamWConfig oc;
    oc.lr = o.at("lr").get<double>();
    oc.beta1 = o.at("beta1").get<double>();
    oc.beta2 = o.at("beta2").get<double>();
    oc.eps = o.at("eps").get<double>();
    oc.weight_decay = o.at("weight_decay").get<double>();
    oc.on_non_finite = o.value("on_non_finite", std::string("fail")) == "fail" ? NonFinitePolicy::fail : NonFinitePolicy::skip_step;
    auto ptrs = ck.model.tensors();
    std::vector<const Tensor<float>*> cptrs(ptrs.begin(), ptrs.end());
    AdamWState<float> st(oc, cptrs);
    st.step = o.at("step").get<std::int64_t>();
    const auto names = ck.model.names();
    for (std::size_t i = 0; i < names.size(); ++i) fill("adamw.m/" + names[i], st.m[i]);
    for (std::size_t i = 0; i < names.size(); ++i) fill("adamw.v/" + names[i], st.v[i]);
    ck.optimizer = std::move(st);
  }
  if (!directory.empty()) {
    throw CheckpointShapeError(path.string() + ": unexpected tensor '" + directory.begin()->first + "'");
  }
  return ck;
}

// --- datasets -----------------------------------------------------------------

json to_json(const GenSpec& s) {
  json j{{"algorithm", to_string(s.algorithm)}, {"grid_n", s.grid_n}, {"seed", s.seed}};
  j["p"] = s.p ? json(*s.p) : json(nullptr);
  j["min_path_len"] = s.min_path_len ? json(*s.min_path_len) : json(nullptr);
  return j;
}

GenSpec gen_spec_from_json(const json& j) {
  GenSpec s;
  s.algorithm = algorithm_from_string(j.at("algorithm").get<std::string>());
  s.grid_n = j.at("grid_n").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("p") && !j.at("p").is_null()) s.p = j.at("p").get<double>();
  if (j.contains("min_path_len") && !j.at("min_path_len").is_null()) s.min_path_len = j.at("min_path_len").get<int>();
  return s;
}

namespace {
json coord_json(Coord c) { return json::array({c.row, c.col}); }
Coord coord_from(const json& j) { return {j.at(0).get<int>(), j.at(1).get<int>()}; }
}  // namespace

json record_to_json(const DatasetRecord& rec, const Vocabulary& vocab) {
  json edges = json::array();
  for (const auto& e : rec.solved.maze.edges()) edges.push_back(json::array({coord_json(e.a), coord_json(e.b)}));
  json path = json::array();
  for (const Coord c : rec.solved.path) path.push_back(coord_json(c));
  return json{{"index", rec.index},
              {"grid_n", rec.solved.maze.grid_n()},
              {"edges", edges},
              {"origin", coord_json(rec.solved.origin)},
              {"target", coord_json(rec.solved.target)},
              {"path", path},
              {"gen_spec", to_json(rec.spec)},
              {"seed", rec.seed},
              {"shuffle_seed", rec.shuffle_seed},
              {"tokens", to_text(rec.tokens, vocab)}};
}

DatasetRecord record_from_json(const json& j, const Vocabulary& vocab) {
  DatasetRecord rec;
  rec.index = j.at("index").get<std::uint64_t>();
  const int n = j.at("grid_n").get<int>();
  Maze maze(n);
  for (const auto& e : j.at("edges")) maze.connect(coord_from(e.at(0)), coord_from(e.at(1)));
  rec.solved.maze = std::move(maze);
  rec.solved.origin = coord_from(j.at("origin"));
  rec.solved.target = coord_from(j.at("target"));
  for (const auto& c : j.at("path")) rec.solved.path.push_back(coord_from(c));
  rec.spec = gen_spec_from_json(j.at("gen_spec"));
  rec.seed = j.at("seed").get<std::uint64_t>();
  rec.shuffle_seed = j.at("shuffle_seed").get<std::uint64_t>();
  rec.tokens = from_text(j.at("tokens").get<std::string>(), vocab);
  const SolvedMaze decoded = decode(rec.tokens, vocab, n);
  if (!(decoded == rec.solved)) {
    throw std::runtime_error("dataset record " + std::to_string(rec.index) + ": token text disagrees with structured fields");
  }
  return rec;
}

void save_dataset(const std::filesystem::path& path, const Dataset& ds, const Vocabulary& vocab) {
  std::string out;
  for (const auto& rec : ds.records) {
    json j = record_to_json(rec, vocab);
    j["dataset"] = {{"tag", ds.tag}, {"seed", ds.seed}, {"max_grid_n", ds.max_grid_n}, {"format_version", kDatasetVersion}};
    out += j.dump();
    out += '\n';
  }
  write_file(path, out);
}

Dataset load_dataset(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  Dataset ds;
  ds.max_grid_n = vocab.max_grid_n();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (j.contains("dataset")) {
        ds.tag = j["dataset"].value("tag", std::string());
        ds.seed = j["dataset"].value("seed", std::uint64_t{0});
      }
      ds.records.push_back(record_from_json(j, vocab));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return ds;
}

int dataset_max_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  int n = 2;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    n = std::max(n, j.at("grid_n").get<int>());
    if (j.contains("dataset")) n = std::max(n, j["dataset"].value("max_grid_n", 2));
  }
  return n;
}

}  // namespace mazelab

#include "shiftnas/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "shiftnas/error.hpp"

namespace shiftnas {

const std::vector<std::size_t>& Dataset::split(Split s) const {
  switch (s) {
    case Split::train: return train;
    case Split::val: return val;
    case Split::test: return test;
  }
  return train;
}

void Dataset::validate() const {
  const std::size_t n = labels.size();
  if (features.rows() != n) throw InvalidArgument("dataset '" + name + "': feature rows != label count");
  std::vector<char> seen(n, 0);
  for (const auto* s : {&train, &val, &test})
    for (auto i : *s) {
      if (i >= n) throw InvalidArgument("dataset '" + name + "': split index out of range");
      if (seen[i]++) throw InvalidArgument("dataset '" + name + "': splits overlap at row " + std::to_string(i));
    }
  if (std::count(seen.begin(), seen.end(), 0) != 0)
    throw InvalidArgument("dataset '" + name + "': splits do not cover every row");
  for (auto l : labels)
    if (l >= num_classes) throw InvalidArgument("dataset '" + name + "': label out of range");
}

void Dataset::validate_for_training() const {
  validate();
  if (train.empty()) throw InvalidArgument("dataset '" + name + "': empty train split");
  if (val.empty()) throw InvalidArgument("dataset '" + name + "': empty validation split");
  for (const auto* s : {&train, &val}) {
    std::vector<char> present(num_classes, 0);
    for (auto i : *s) present[labels[i]] = 1;
    for (std::size_t c = 0; c < num_classes; ++c)
      if (!present[c])
        throw InvalidArgument("dataset '" + name + "': class " + std::to_string(c) + " missing from " +
                              (s == &train ? "train" : "val") + " split");
  }
}

Batch make_batch(const Dataset& ds, std::span<const std::size_t> rows) {
  Batch b{nn::Matrix(rows.size(), ds.dim()), std::vector<std::size_t>(rows.size())};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto src = ds.features.row(rows[i]);
    std::copy(src.begin(), src.end(), b.inputs.row(i).begin());
    b.labels[i] = ds.labels[rows[i]];
  }
  return b;
}

BatchStream::BatchStream(const Dataset& ds, Split split, std::size_t batch_size, std::uint64_t seed)
    : ds_(&ds), order_(ds.split(split)), batch_size_(batch_size), rng_(seed) {
  if (order_.empty()) throw InvalidArgument("BatchStream: dataset '" + ds.name + "' has an empty split");
  if (batch_size_ == 0) throw InvalidArgument("BatchStream: batch_size must be positive");
  shuffle(order_, rng_);
}

Batch BatchStream::next() { return next(batch_size_); }

Batch BatchStream::next(std::size_t n) {
  std::vector<std::size_t> rows;
  rows.reserve(n);
  while (rows.size() < n) {
    if (pos_ == order_.size()) {
      shuffle(order_, rng_);
      pos_ = 0;
    }
    rows.push_back(order_[pos_++]);
  }
  return make_batch(*ds_, rows);
}

void assign_default_splits(Dataset& ds, std::uint64_t seed) {
  std::vector<std::size_t> idx(ds.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  shuffle(idx, rng);
  const std::size_t n_train = idx.size() * 70 / 100;
  const std::size_t n_val = idx.size() * 15 / 100;
  ds.train.assign(idx.begin(), idx.begin() + n_train);
  ds.val.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
  ds.test.assign(idx.begin() + n_train + n_val, idx.end());
  std::sort(ds.train.begin(), ds.train.end());
  std::sort(ds.val.begin(), ds.val.end());
  std::sort(ds.test.begin(), ds.test.end());
}

namespace {

struct BlobSpec {
  std::size_t classes, dim, centers_per_class, n;
  double center_scale, noise;
};

Dataset make_blobs(std::string name, const BlobSpec& spec, Rng& rng) {
  const std::size_t n_centers = spec.classes * spec.centers_per_class;
  nn::Matrix centers(n_centers, spec.dim);
  for (auto& v : centers.data()) v = spec.center_scale * rng.normal();
  Dataset ds;
  ds.name = std::move(name);
  ds.num_classes = spec.classes;
  ds.features = nn::Matrix(spec.n, spec.dim);
  ds.labels.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const std::size_t label = i % spec.classes;
    const std::size_t center = label * spec.centers_per_class + rng.index(spec.centers_per_class);
    for (std::size_t d = 0; d < spec.dim; ++d) ds.features(i, d) = centers(center, d) + spec.noise * rng.normal();
    ds.labels[i] = label;
  }
  return ds;
}

// Concentric rings in a random 2-D plane of R^dim plus small off-plane noise.
Dataset make_rings(Rng& rng) {
  constexpr std::size_t kClasses = 4, kDim = 16, kN = 4000;
  // Gram-Schmidt on two random directions
  std::vector<double> u(kDim), v(kDim);
  for (auto& x : u) x = rng.normal();
  for (auto& x : v) x = rng.normal();
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  const double nu = std::sqrt(dot(u, u));
  for (auto& x : u) x /= nu;
  const double proj = dot(u, v);
  for (std::size_t i = 0; i < kDim; ++i) v[i] -= proj * u[i];
  const double nv = std::sqrt(dot(v, v));
  for (auto& x : v) x /= nv;

  Dataset ds;
  ds.name = "rings";
  ds.num_classes = kClasses;
  ds.features = nn::Matrix(kN, kDim);
  ds.labels.resize(kN);
  for (std::size_t i = 0; i < kN; ++i) {
    const std::size_t label = i % kClasses;
    const double radius = 1.0 + static_cast<double>(label) + 0.15 * rng.normal();
    const double theta = rng.uniform(0.0, 2.0 * M_PI);
    const double a = radius * std::cos(theta), b = radius * std::sin(theta);
    for (std::size_t d = 0; d < kDim; ++d) ds.features(i, d) = a * u[d] + b * v[d] + 0.1 * rng.normal();
    ds.labels[i] = label;
  }
  return ds;
}

}  // namespace

Dataset generate_synthetic(std::string_view preset, std::uint64_t seed) {
  Rng rng(derive_seed(seed, preset));
  Dataset ds;
  if (preset == "blobs-easy")
    ds = make_blobs("blobs-easy", {10, 16, 1, 4000, 3.0, 1.0}, rng);
  else if (preset == "blobs-hard")
    ds = make_blobs("blobs-hard", {10, 16, 20, 12000, 1.0, 0.4}, rng);
  else if (preset == "rings")
    ds = make_rings(rng);
  else
    throw InvalidArgument("unknown dataset preset '" + std::string(preset) +
                          "' (expected blobs-easy, blobs-hard or rings)");
  assign_default_splits(ds, derive_seed(seed, "split"));
  ds.validate_for_training();
  return ds;
}

void save_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  for (std::size_t d = 0; d < ds.dim(); ++d) os << 'f' << d << ',';
  os << "label,split\n";
  std::vector<const char*> split_of(ds.size(), "train");
  for (auto i : ds.val) split_of[i] = "val";
  for (auto i : ds.test) split_of[i] = "test";
  char buf[32];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t d = 0; d < ds.dim(); ++d) {
      std::snprintf(buf, sizeof buf, "%.17g", ds.features(i, d));
      os << buf << ',';
    }
    const long long label =
        ds.label_mapping.empty() ? static_cast<long long>(ds.labels[i]) : ds.label_mapping[ds.labels[i]];
    os << label << ',' << split_of[i] << '\n';
  }
  if (!os) throw IoError("write to '" + path.string() + "' failed");
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto comma = line.find(',', pos);
    out.push_back(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return s;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, std::uint64_t split_seed) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open dataset '" + path.string() + "'");
  std::string line;
  if (!std::getline(is, line)) throw ParseError(1, "empty file");
  const auto header = split_fields(trim(line));
  std::size_t dim = 0;
  while (dim < header.size() && trim(header[dim]) == "f" + std::to_string(dim)) ++dim;
  const bool has_split = dim + 2 == header.size() && trim(header[dim + 1]) == "split";
  if (dim == 0 || dim >= header.size() || trim(header[dim]) != "label" || (dim + 1 != header.size() && !has_split))
    throw ParseError(1, "expected header f0,...,f{d-1},label[,split]");

  Dataset ds;
  ds.name = path.stem().string();
  std::vector<double> values;
  std::vector<long long> raw_labels;
  std::vector<std::string> splits;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty()) continue;
    const auto fields = split_fields(t);
    if (fields.size() != header.size())
      throw ParseError(line_no, "expected " + std::to_string(header.size()) + " fields, got " +
                                    std::to_string(fields.size()));
    for (std::size_t d = 0; d < dim; ++d) {
      const auto f = trim(fields[d]);
      double v = 0;
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || p != f.data() + f.size() || !std::isfinite(v))
        throw ParseError(line_no, "non-numeric value '" + std::string(f) + "' in column f" + std::to_string(d));
      values.push_back(v);
    }
    const auto lf = trim(fields[dim]);
    long long label = 0;
    auto [p, ec] = std::from_chars(lf.data(), lf.data() + lf.size(), label);
    if (ec != std::errc() || p != lf.data() + lf.size() || label < 0)
      throw ParseError(line_no, "label '" + std::string(lf) + "' is not a nonnegative integer");
    raw_labels.push_back(label);
    if (has_split) {
      const auto s = trim(fields[dim + 1]);
      if (s != "train" && s != "val" && s != "test")
        throw ParseError(line_no, "split must be train, val or test (got '" + std::string(s) + "')");
      splits.emplace_back(s);
    }
  }
  if (raw_labels.empty()) throw ParseError(line_no, "no data rows");

  const std::size_t n = raw_labels.size();
  ds.features = nn::Matrix(n, dim, std::move(values));

  std::map<long long, std::size_t> remap;
  for (auto l : raw_labels) remap.emplace(l, 0);
  std::size_t next = 0;
  bool contiguous = true;
  for (auto& [orig, idx] : remap) {
    if (orig != static_cast<long long>(next)) contiguous = false;
    idx = next++;
  }
  ds.num_classes = remap.size();
  ds.labels.reserve(n);
  for (auto l : raw_labels) ds.labels.push_back(remap[l]);
  if (!contiguous) {
    std::string msg = "labels remapped:";
    for (const auto& [orig, idx] : remap) {
      ds.label_mapping.push_back(orig);
      msg += " " + std::to_string(orig) + "->" + std::to_string(idx);
    }
    ds.warnings.push_back(msg);
  }

  if (has_split) {
    for (std::size_t i = 0; i < n; ++i) {
      if (splits[i] == "train")
        ds.train.push_back(i);
      else if (splits[i] == "val")
        ds.val.push_back(i);
      else
        ds.test.push_back(i);
    }
  } else {
    assign_default_splits(ds, split_seed);
  }
  ds.validate();
  return ds;
}

}  // namespace shiftnas

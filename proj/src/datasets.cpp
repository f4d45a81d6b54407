#include "sgunlearn/datasets.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "sgunlearn/rng.hpp"

namespace sgu {

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTestAudit: return "test_audit";
    case Split::kTestEval: return "test_eval";
  }
  return "?";
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test_audit") return Split::kTestAudit;
  if (name == "test_eval") return Split::kTestEval;
  throw ContractError("unknown split tag '" + name + "'");
}

std::vector<long> DatasetBundle::rows_in(Split s) const {
  std::vector<long> out;
  for (long i = 0; i < rows(); ++i)
    if (split_ids[static_cast<std::size_t>(i)] == s) out.push_back(i);
  return out;
}

DatasetBundle gen_gaussian_mixture(long num_classes, long n_per_class, long dim, double separation,
                                   std::uint64_t seed) {
  if (num_classes < 2) throw ContractError("gen_gaussian_mixture: need at least 2 classes");
  if (dim < 2) throw ContractError("gen_gaussian_mixture: need dim >= 2");
  if (n_per_class < 4) throw ContractError("gen_gaussian_mixture: need at least 4 rows per class");
  if (!(separation >= 0.0)) throw ContractError("gen_gaussian_mixture: separation must be >= 0");

  const long n = num_classes * n_per_class;
  DatasetBundle b;
  b.features = Matrix(n, dim);
  b.labels.resize(static_cast<std::size_t>(n));
  b.split_ids.resize(static_cast<std::size_t>(n));
  b.num_classes = num_classes;
  b.seed = seed;

  // Split sizes per class: rounding on the first three fractions, remainder
  // to test_eval, so the four sets always partition the class.
  const long n_tr = std::lround(0.60 * static_cast<double>(n_per_class));
  const long n_val = std::lround(0.10 * static_cast<double>(n_per_class));
  const long n_audit = std::lround(0.15 * static_cast<double>(n_per_class));
  const long n_eval = n_per_class - n_tr - n_val - n_audit;
  if (n_eval < 1 || n_val < 1 || n_audit < 1)
    throw ContractError("gen_gaussian_mixture: n_per_class too small for the 60/10/15/15 split");

  Rng feat_rng(mix_seed(seed, 1));
  Rng split_rng(mix_seed(seed, 2));
  for (long k = 0; k < num_classes; ++k) {
    const double angle = 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(num_classes);
    const double cx = separation * std::cos(angle);
    const double cy = separation * std::sin(angle);
    for (long i = 0; i < n_per_class; ++i) {
      const long row = k * n_per_class + i;
      b.labels[static_cast<std::size_t>(row)] = k;
      for (long c = 0; c < dim; ++c) b.features.at(row, c) = feat_rng.normal();
      b.features.at(row, 0) += cx;
      b.features.at(row, 1) += cy;
    }
    std::vector<long> order(static_cast<std::size_t>(n_per_class));
    for (long i = 0; i < n_per_class; ++i) order[static_cast<std::size_t>(i)] = i;
    split_rng.shuffle(order);
    for (long i = 0; i < n_per_class; ++i) {
      Split s = Split::kTestEval;
      if (i < n_tr) s = Split::kTrain;
      else if (i < n_tr + n_val) s = Split::kVal;
      else if (i < n_tr + n_val + n_audit) s = Split::kTestAudit;
      b.split_ids[static_cast<std::size_t>(k * n_per_class + order[static_cast<std::size_t>(i)])] = s;
    }
  }
  return b;
}

ForgetPartition split_forget_random(const DatasetBundle& bundle, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0))
    throw ContractError("split_forget_random: ratio must lie in (0,1)");
  const std::vector<long> train = bundle.rows_in(Split::kTrain);
  const long k = std::lround(ratio * static_cast<double>(train.size()));
  if (k < 1) throw ContractError("split_forget_random: forget set would be empty");

  Rng rng(mix_seed(seed, 11));
  std::vector<long> picks =
      rng.sample_without_replacement(static_cast<long>(train.size()), k);
  std::vector<bool> is_forget(train.size(), false);
  for (long p : picks) is_forget[static_cast<std::size_t>(p)] = true;

  ForgetPartition part;
  part.mode = ForgetMode::kRandom;
  part.ratio = ratio;
  part.seed = seed;
  for (std::size_t i = 0; i < train.size(); ++i)
    (is_forget[i] ? part.forget_indices : part.retain_indices).push_back(train[i]);
  return part;
}

ForgetPartition split_forget_classwise(const DatasetBundle& bundle, long forget_class,
                                       std::uint64_t seed) {
  if (forget_class < 0 || forget_class >= bundle.num_classes)
    throw ContractError("split_forget_classwise: class out of range");
  ForgetPartition part;
  part.mode = ForgetMode::kClasswise;
  part.forget_class = forget_class;
  part.seed = seed;
  for (long r : bundle.rows_in(Split::kTrain))
    (bundle.labels[static_cast<std::size_t>(r)] == forget_class ? part.forget_indices
                                                                : part.retain_indices)
        .push_back(r);
  if (part.forget_indices.empty())
    throw ContractError("split_forget_classwise: forget set is empty");
  return part;
}

void save_csv(const DatasetBundle& bundle, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ContractError("save_csv: cannot open '" + path + "' for writing");
  for (long c = 0; c < bundle.dim(); ++c) out << "f" << c << ",";
  out << "label,split\n";
  char buf[64];
  for (long r = 0; r < bundle.rows(); ++r) {
    for (long c = 0; c < bundle.dim(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", bundle.features.at(r, c));
      out << buf << ",";
    }
    out << bundle.labels[static_cast<std::size_t>(r)] << ","
        << split_name(bundle.split_ids[static_cast<std::size_t>(r)]) << "\n";
  }
  if (!out) throw ContractError("save_csv: write to '" + path + "' failed");
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_double(const std::string& s, long line_no) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0' || errno == ERANGE)
    throw ParseError("line " + std::to_string(line_no) + ": bad float '" + s + "'");
  return v;
}

long parse_label(const std::string& s, long line_no) {
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0')
    throw ParseError("line " + std::to_string(line_no) + ": label must be an integer, got '" + s +
                     "'");
  if (v < 0) throw ParseError("line " + std::to_string(line_no) + ": label must be nonnegative");
  return v;
}

}  // namespace

DatasetBundle load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ContractError("load_csv: cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw ParseError("line 1: empty file");
  const std::vector<std::string> header = split_fields(line);
  if (header.size() < 3 || header[header.size() - 2] != "label" || header.back() != "split")
    throw ParseError("line 1: header must end with ...,label,split");
  const long dim = static_cast<long>(header.size()) - 2;
  for (long c = 0; c < dim; ++c)
    if (header[static_cast<std::size_t>(c)] != "f" + std::to_string(c))
      throw ParseError("line 1: feature column " + std::to_string(c) + " must be named f" +
                       std::to_string(c));

  std::vector<double> feats;
  DatasetBundle b;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_fields(line);
    if (static_cast<long>(fields.size()) != dim + 2)
      throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(dim + 2) +
                       " fields, got " + std::to_string(fields.size()));
    for (long c = 0; c < dim; ++c)
      feats.push_back(parse_double(fields[static_cast<std::size_t>(c)], line_no));
    b.labels.push_back(parse_label(fields[static_cast<std::size_t>(dim)], line_no));
    b.split_ids.push_back(split_from_name(fields.back()));
  }
  if (b.labels.empty()) throw ParseError("line 1: no data rows");

  b.features.rows = static_cast<long>(b.labels.size());
  b.features.cols = dim;
  b.features.v = std::move(feats);
  b.num_classes = *std::max_element(b.labels.begin(), b.labels.end()) + 1;
  return b;
}

}  // namespace sgu

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "fedln/dataset.hpp"

static_assert(std::endian::native == std::endian::little, "FLNE I/O assumes a little-endian host");

namespace fedln {

namespace {

constexpr std::array<char, 4> kMagic{'F', 'L', 'N', 'E'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint16_t kFlagTrueLabels = 1;
constexpr std::size_t kHeaderBytes = 4 + 2 + 2 + 8 + 4 + 4;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::vector<char> bytes) : buf_(std::move(bytes)) {}

  template <typename T>
  T get(const char* what) {
    if (pos_ + sizeof(T) > buf_.size())
      throw ParseError("FLNE: truncated payload reading " + std::string(what) + " at byte " +
                       std::to_string(pos_));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

std::vector<char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void save_flne(const EmbeddingDataset& ds, const std::filesystem::path& path) {
  ds.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(kMagic.data(), kMagic.size());
  put<std::uint16_t>(os, kVersion);
  put<std::uint16_t>(os, ds.has_oracle() ? kFlagTrueLabels : 0);
  put<std::uint64_t>(os, ds.size());
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ds.dim()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ds.num_classes()));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto x = ds.features(i);
    os.write(reinterpret_cast<const char*>(x.data()), static_cast<std::streamsize>(x.size_bytes()));
    put<std::uint16_t>(os, ds.observed_labels()[i]);
    if (ds.has_oracle()) put<std::uint16_t>(os, ds.true_labels()[i]);
  }
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

EmbeddingDataset load_flne(const std::filesystem::path& path, Split split) {
  Reader r(slurp(path));
  std::array<char, 4> magic{};
  for (auto& ch : magic) ch = r.get<char>("magic");
  if (magic != kMagic) throw ParseError("FLNE: bad magic at byte 0");
  const auto version = r.get<std::uint16_t>("version");
  if (version != kVersion)
    throw ParseError("FLNE: unsupported version " + std::to_string(version) + " at byte 4");
  const auto flags = r.get<std::uint16_t>("flags");
  if (flags & ~kFlagTrueLabels) throw ParseError("FLNE: unknown flag bits at byte 6");
  const auto n = r.get<std::uint64_t>("record count");
  const auto d = r.get<std::uint32_t>("dim");
  const auto c = r.get<std::uint32_t>("class count");
  if (d == 0) throw ParseError("FLNE: zero dimension at byte 16");
  if (c == 0 || c > 65535) throw ParseError("FLNE: class count out of range at byte 20");

  const bool with_truth = flags & kFlagTrueLabels;
  const std::size_t record_bytes = d * sizeof(float) + 2 + (with_truth ? 2 : 0);
  if (n > r.remaining() / record_bytes || n * record_bytes != r.remaining()) {
    if (n > r.remaining() / record_bytes)
      throw ParseError("FLNE: truncated payload; header declares " + std::to_string(n) +
                       " records but only " + std::to_string(r.remaining()) + " bytes follow byte " +
                       std::to_string(kHeaderBytes));
    throw ParseError("FLNE: trailing bytes after record " + std::to_string(n) + " at byte " +
                     std::to_string(kHeaderBytes + n * record_bytes));
  }

  EmbeddingDataset ds(static_cast<int>(d), static_cast<int>(c), split);
  if (!with_truth) ds.drop_oracle();
  std::vector<float> x(d);
  for (std::uint64_t k = 0; k < n; ++k) {
    for (auto& v : x) v = r.get<float>("feature");
    const auto obs = r.get<std::uint16_t>("label");
    const auto truth = with_truth ? r.get<std::uint16_t>("true label") : obs;
    if (obs >= c || truth >= c)
      throw ParseError("FLNE: label out of range at record " + std::to_string(k) + " (byte " +
                       std::to_string(r.offset() - (with_truth ? 4 : 2)) + ")");
    if (split == Split::test && obs != truth)
      throw ParseError("FLNE: test split record " + std::to_string(k) + " has a noisy label");
    ds.add(x, obs, truth);
  }
  return ds;
}

void save_csv(const EmbeddingDataset& ds, const std::filesystem::path& path) {
  ds.validate();
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  for (int t = 0; t < ds.dim(); ++t) os << 'f' << t << ',';
  os << "label";
  if (ds.has_oracle()) os << ",true_label";
  os << '\n' << std::setprecision(9);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (float v : ds.features(i)) os << v << ',';
    os << ds.observed_labels()[i];
    if (ds.has_oracle()) os << ',' << ds.true_labels()[i];
    os << '\n';
  }
}

EmbeddingDataset load_csv(const std::filesystem::path& path, Split split, int num_classes) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError("CSV: missing header at line 1");

  std::vector<std::string> cols;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cols.push_back(cell);
  }
  int d = 0;
  while (d < static_cast<int>(cols.size()) && cols[d] == "f" + std::to_string(d)) ++d;
  const int rest = static_cast<int>(cols.size()) - d;
  const bool with_truth = rest == 2 && cols[d + 1] == "true_label";
  if (d == 0 || rest < 1 || rest > 2 || cols[d] != "label" || (rest == 2 && !with_truth))
    throw ParseError("CSV: malformed header at line 1 (expected f0,...,f{d-1},label[,true_label])");

  struct Row {
    std::vector<float> x;
    long obs;
    long truth;
    std::size_t line;
  };
  std::vector<Row> rows;
  std::size_t lineno = 1;
  long max_label = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != cols.size())
      throw ParseError("CSV: dimension mismatch at line " + std::to_string(lineno) + " (" +
                       std::to_string(cells.size()) + " fields, expected " +
                       std::to_string(cols.size()) + ")");
    Row row{std::vector<float>(d), 0, 0, lineno};
    try {
      for (int t = 0; t < d; ++t) row.x[t] = std::stof(cells[t]);
      std::size_t used = 0;
      row.obs = std::stol(cells[d], &used);
      if (used != cells[d].size()) throw std::invalid_argument("label");
      row.truth = with_truth ? std::stol(cells[d + 1]) : row.obs;
    } catch (const std::exception&) {
      throw ParseError("CSV: unparsable field at line " + std::to_string(lineno));
    }
    if (row.obs < 0 || row.truth < 0)
      throw ParseError("CSV: label out of range at line " + std::to_string(lineno));
    max_label = std::max({max_label, row.obs, row.truth});
    rows.push_back(std::move(row));
  }
  const long c = num_classes > 0 ? num_classes : max_label + 1;
  if (c <= 0 || c > 65535) throw ParseError("CSV: cannot determine class count");

  EmbeddingDataset ds(d, static_cast<int>(c), split);
  if (!with_truth) ds.drop_oracle();
  for (const auto& row : rows) {
    if (row.obs >= c || row.truth >= c)
      throw ParseError("CSV: label out of range at line " + std::to_string(row.line));
    if (split == Split::test && row.obs != row.truth)
      throw ParseError("CSV: test split has a noisy label at line " + std::to_string(row.line));
    ds.add(row.x, static_cast<ClassIndex>(row.obs), static_cast<ClassIndex>(row.truth));
  }
  return ds;
}

EmbeddingDataset load_dataset(const std::filesystem::path& path, Split split) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::array<char, 4> head{};
  in.read(head.data(), head.size());
  if (in.gcount() == 4 && head == kMagic) return load_flne(path, split);
  return load_csv(path, split);
}

}  // namespace fedln

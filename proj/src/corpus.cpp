#include "seqrec/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

namespace seqrec {

using nlohmann::json;

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

bool parse_int64(const std::string& s, std::int64_t& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto res = std::from_chars(first, last, out);
  return res.ec == std::errc{} && res.ptr == last;
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace

int Vocab::item_of(const std::string& raw) const {
  auto it = item_index.find(raw);
  if (it == item_index.end()) throw UnknownItem(raw);
  return it->second;
}

int Vocab::add_attr(const std::string& raw) {
  auto it = attr_index.find(raw);
  if (it != attr_index.end()) return it->second;
  attrs.push_back(raw);
  const int idx = static_cast<int>(attrs.size());
  attr_index.emplace(raw, idx);
  return idx;
}

RawInteractions load_interactions(const std::filesystem::path& path,
                                  InteractionFormat format) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  RawInteractions out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    RawRecord rec;
    if (format == InteractionFormat::tsv) {
      const auto fields = split_tabs(line);
      if (fields.size() != 3 || fields[0].empty() || fields[1].empty() ||
          !parse_int64(fields[2], rec.ts))
        throw MalformedLine(path.string(), line_no);
      rec.user = fields[0];
      rec.item = fields[1];
    } else {
      json j = json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object() || !j.contains("user") ||
          !j.contains("item") || !j.contains("ts") ||
          !j["user"].is_string() || !j["item"].is_string() ||
          !j["ts"].is_number_integer())
        throw MalformedLine(path.string(), line_no);
      rec.user = j["user"].get<std::string>();
      rec.item = j["item"].get<std::string>();
      rec.ts = j["ts"].get<std::int64_t>();
      if (rec.user.empty() || rec.item.empty())
        throw MalformedLine(path.string(), line_no);
    }
    out.records.push_back(std::move(rec));
  }
  if (out.records.empty()) throw EmptyFile(path.string());
  return out;
}

RawInteractions k_core_filter(const RawInteractions& raw, int k) {
  if (k < 1) throw std::invalid_argument("k-core requires k >= 1");
  std::vector<char> alive(raw.records.size(), 1);
  bool changed = true;
  while (changed) {
    changed = false;
    std::unordered_map<std::string, int> user_count, item_count;
    for (std::size_t i = 0; i < raw.records.size(); ++i) {
      if (!alive[i]) continue;
      ++user_count[raw.records[i].user];
      ++item_count[raw.records[i].item];
    }
    for (std::size_t i = 0; i < raw.records.size(); ++i) {
      if (!alive[i]) continue;
      if (user_count[raw.records[i].user] < k ||
          item_count[raw.records[i].item] < k) {
        alive[i] = 0;
        changed = true;
      }
    }
  }
  RawInteractions out;
  for (std::size_t i = 0; i < raw.records.size(); ++i)
    if (alive[i]) out.records.push_back(raw.records[i]);
  if (out.records.empty()) throw EmptyAfterFilter();
  return out;
}

Vocab build_item_vocab(const RawInteractions& raw) {
  Vocab v;
  for (const auto& r : raw.records) {
    if (v.item_index.count(r.item)) continue;
    v.items.push_back(r.item);
    v.item_index.emplace(r.item, static_cast<int>(v.items.size()));
  }
  return v;
}

std::vector<InteractionSequence> build_sequences(const RawInteractions& raw,
                                                 const Vocab& vocab) {
  std::vector<std::string> user_order;
  std::unordered_map<std::string, std::vector<std::pair<std::int64_t, int>>>
      per_user;
  for (const auto& r : raw.records) {
    auto it = per_user.find(r.user);
    if (it == per_user.end()) {
      user_order.push_back(r.user);
      it = per_user.emplace(r.user, decltype(per_user)::mapped_type{}).first;
    }
    it->second.emplace_back(r.ts, vocab.item_of(r.item));
  }
  std::vector<InteractionSequence> out;
  out.reserve(user_order.size());
  for (const auto& user : user_order) {
    auto& events = per_user[user];
    std::stable_sort(events.begin(), events.end(),
                     [](const auto& a, const auto& b) {
                       return a.first < b.first;
                     });
    InteractionSequence seq;
    seq.user = user;
    seq.items.reserve(events.size());
    for (const auto& [ts, item] : events) seq.items.push_back(item);
    out.push_back(std::move(seq));
  }
  return out;
}

AttributeTable load_attributes(const std::filesystem::path& path,
                               Vocab& vocab) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  AttributeTable table;
  table.attrs.assign(static_cast<std::size_t>(vocab.item_count()) + 1, {});
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("item") ||
        !j.contains("attrs") || !j["item"].is_string() ||
        !j["attrs"].is_array())
      throw MalformedLine(path.string(), line_no);
    const std::string item = j["item"].get<std::string>();
    auto it = vocab.item_index.find(item);
    if (it == vocab.item_index.end()) continue;  // filtered item
    std::set<int> uniq;
    for (const auto& a : j["attrs"]) {
      if (!a.is_string()) throw MalformedLine(path.string(), line_no);
      uniq.insert(vocab.add_attr(a.get<std::string>()));
    }
    auto& dst = table.attrs[static_cast<std::size_t>(it->second)];
    dst.assign(uniq.begin(), uniq.end());
  }
  return table;
}

DatasetSplit leave_one_out_split(std::vector<InteractionSequence> seqs) {
  DatasetSplit split;
  split.full = std::move(seqs);
  split.train.reserve(split.full.size());
  split.valid_target.reserve(split.full.size());
  split.test_target.reserve(split.full.size());
  for (const auto& seq : split.full) {
    const std::size_t m = seq.items.size();
    if (m < 3) throw SequenceTooShort(seq.user);
    split.train.emplace_back(seq.items.begin(), seq.items.end() - 2);
    split.valid_target.push_back(seq.items[m - 2]);
    split.test_target.push_back(seq.items[m - 1]);
  }
  return split;
}

std::pair<std::vector<int>, std::vector<std::uint8_t>> truncate_pad(
    const std::vector<int>& items, int max_len) {
  std::vector<int> ids(static_cast<std::size_t>(max_len), 0);
  std::vector<std::uint8_t> validity(static_cast<std::size_t>(max_len), 0);
  const std::size_t keep =
      std::min(items.size(), static_cast<std::size_t>(max_len));
  const std::size_t pad = static_cast<std::size_t>(max_len) - keep;
  for (std::size_t i = 0; i < keep; ++i) {
    ids[pad + i] = items[items.size() - keep + i];
    validity[pad + i] = 1;
  }
  return {std::move(ids), std::move(validity)};
}

CorpusStats compute_stats(const Dataset& ds) {
  CorpusStats s;
  s.users = static_cast<long>(ds.split.full.size());
  s.items = ds.vocab.item_count();
  for (const auto& seq : ds.split.full)
    s.actions += static_cast<long>(seq.items.size());
  if (s.users > 0)
    s.avg_actions_per_user = static_cast<double>(s.actions) / s.users;
  if (s.items > 0)
    s.avg_actions_per_item = static_cast<double>(s.actions) / s.items;
  if (s.users > 0 && s.items > 0)
    s.sparsity = 1.0 - static_cast<double>(s.actions) /
                           (static_cast<double>(s.users) * s.items);
  s.attributes = ds.vocab.attr_count();
  long attr_assignments = 0;
  for (int i = 1; i <= ds.vocab.item_count(); ++i)
    attr_assignments += static_cast<long>(ds.attrs.of(i).size());
  if (s.items > 0)
    s.avg_attrs_per_item = static_cast<double>(attr_assignments) / s.items;
  return s;
}

std::string format_stats(const CorpusStats& s) {
  std::ostringstream os;
  os << "# Users            " << s.users << "\n"
     << "# Items            " << s.items << "\n"
     << "# Actions          " << s.actions << "\n"
     << "# Avg. Actions/User " << s.avg_actions_per_user << "\n"
     << "# Avg. Actions/Item " << s.avg_actions_per_item << "\n"
     << "Sparsity           " << s.sparsity * 100.0 << "%\n"
     << "# Attributes       " << s.attributes << "\n"
     << "# Avg. Attrs/Item  " << s.avg_attrs_per_item << "\n";
  return os.str();
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    json j;
    j["items"] = ds.vocab.items;
    j["attrs"] = ds.vocab.attrs;
    std::ofstream out(dir / "vocab.json");
    if (!out) throw IoError("cannot write vocab.json");
    out << j.dump(2) << "\n";
  }
  {
    std::ofstream out(dir / "sequences.jsonl");
    if (!out) throw IoError("cannot write sequences.jsonl");
    for (const auto& seq : ds.split.full) {
      json j;
      j["user"] = seq.user;
      j["items"] = seq.items;
      out << j.dump() << "\n";
    }
  }
  {
    std::ofstream out(dir / "attributes.jsonl");
    if (!out) throw IoError("cannot write attributes.jsonl");
    for (int i = 1; i <= ds.vocab.item_count(); ++i) {
      json j;
      j["item"] = i;
      j["attrs"] = ds.attrs.of(i);
      out << j.dump() << "\n";
    }
  }
  {
    json j;
    json users = json::array();
    for (std::size_t u = 0; u < ds.split.full.size(); ++u) {
      json row;
      row["user"] = ds.split.full[u].user;
      row["train"] = ds.split.train[u];
      row["valid"] = ds.split.valid_target[u];
      row["test"] = ds.split.test_target[u];
      users.push_back(std::move(row));
    }
    j["users"] = std::move(users);
    std::ofstream out(dir / "split.json");
    if (!out) throw IoError("cannot write split.json");
    out << j.dump() << "\n";
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  {
    std::ifstream in(dir / "vocab.json");
    if (!in) throw IoError("cannot open vocab.json in " + dir.string());
    json j = json::parse(in);
    ds.vocab.items = j.at("items").get<std::vector<std::string>>();
    ds.vocab.attrs = j.at("attrs").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < ds.vocab.items.size(); ++i)
      ds.vocab.item_index.emplace(ds.vocab.items[i], static_cast<int>(i + 1));
    for (std::size_t i = 0; i < ds.vocab.attrs.size(); ++i)
      ds.vocab.attr_index.emplace(ds.vocab.attrs[i], static_cast<int>(i + 1));
  }
  std::vector<InteractionSequence> seqs;
  {
    std::ifstream in(dir / "sequences.jsonl");
    if (!in) throw IoError("cannot open sequences.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json j = json::parse(line);
      InteractionSequence seq;
      seq.user = j.at("user").get<std::string>();
      seq.items = j.at("items").get<std::vector<int>>();
      seqs.push_back(std::move(seq));
    }
  }
  ds.split = leave_one_out_split(std::move(seqs));
  {
    ds.attrs.attrs.assign(
        static_cast<std::size_t>(ds.vocab.item_count()) + 1, {});
    std::ifstream in(dir / "attributes.jsonl");
    if (!in) throw IoError("cannot open attributes.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json j = json::parse(line);
      const int item = j.at("item").get<int>();
      ds.attrs.attrs.at(static_cast<std::size_t>(item)) =
          j.at("attrs").get<std::vector<int>>();
    }
  }
  return ds;
}

Dataset preprocess(const std::filesystem::path& interactions,
                   InteractionFormat format,
                   const std::filesystem::path& attributes, int k_core) {
  RawInteractions raw = load_interactions(interactions, format);
  raw = k_core_filter(raw, k_core);
  Dataset ds;
  ds.vocab = build_item_vocab(raw);
  auto seqs = build_sequences(raw, ds.vocab);
  ds.attrs = load_attributes(attributes, ds.vocab);
  ds.split = leave_one_out_split(std::move(seqs));
  return ds;
}

}  // namespace seqrec

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <cstring>
#include <numeric>

#include "rodpo/data/catalog.hpp"
#include "rodpo/data/dataset.hpp"
#include "rodpo/data/interactions.hpp"
#include "rodpo/data/store.hpp"
#include "rodpo/data/synthetic.hpp"

using namespace rodpo;
using namespace rodpo::data;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("rodpo_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RawInteractions parse(const std::string& text) {
  std::istringstream in(text);
  return parse_interactions(in);
}

// Union of every record subset in which each present user and item has at
// least k records; equals the k-core by maximality.
std::set<std::size_t> brute_force_kcore(const std::vector<RawRecord>& recs, int k) {
  const std::size_t n = recs.size();
  std::uint32_t best = 0;
  for (std::uint32_t mask = 1; mask < (1U << n); ++mask) {
    std::map<int, int> uc, ic;
    for (std::size_t r = 0; r < n; ++r) {
      if (mask & (1U << r)) {
        ++uc[recs[r].user];
        ++ic[recs[r].item];
      }
    }
    bool ok = true;
    for (auto& [_, c] : uc) ok = ok && c >= k;
    for (auto& [_, c] : ic) ok = ok && c >= k;
    if (ok) best |= mask;
  }
  std::set<std::size_t> out;
  for (std::size_t r = 0; r < n; ++r) {
    if (best & (1U << r)) out.insert(r);
  }
  return out;
}

}  // namespace

TEST_CASE("load_interactions parses records, skips comments, drops duplicates") {
  auto raw = parse("# header\nalice\tx\t10\nbob\ty\t20\nalice\tz\t30\n");
  CHECK(raw.records.size() == 3);
  CHECK(raw.users.size() == 2);
  CHECK(raw.items.size() == 3);
  CHECK(raw.users.key(0) == "alice");
  CHECK(raw.items.find("z") == 2);

  auto dup = parse("a\tx\t1\na\tx\t1\na\tx\t2\n");
  CHECK(dup.records.size() == 2);
  CHECK(dup.duplicates_dropped == 1);
}

TEST_CASE("load_interactions errors") {
  try {
    parse("a\tx\t1\nbroken line\n");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse("a\tx\tnope\n"), DataError);
  CHECK_THROWS_AS(parse("a\tx\t-5\n"), DataError);
  CHECK_THROWS_AS(parse(""), DataError);
  CHECK_THROWS_AS(parse("# only a comment\n"), DataError);
  CHECK_THROWS_AS(load_interactions("/nonexistent/file.tsv"), DataError);
}

TEST_CASE("kcore_filter with k=1 is the identity") {
  auto raw = parse("a\tx\t1\nb\ty\t2\nc\tx\t3\n");
  auto out = kcore_filter(raw, 1);
  REQUIRE(out.records.size() == raw.records.size());
  for (std::size_t r = 0; r < raw.records.size(); ++r) {
    CHECK(out.users.key(out.records[r].user) == raw.users.key(raw.records[r].user));
    CHECK(out.items.key(out.records[r].item) == raw.items.key(raw.records[r].item));
  }
}

TEST_CASE("kcore_filter reaches the fixpoint, not a single pass") {
  // u3 has only one record; dropping it leaves item z with one record, which
  // then drops u2's z interaction and u2 falls below k.
  auto raw = parse(
      "u1\tx\t1\nu1\ty\t2\nu2\tx\t3\nu2\ty\t4\nu2\tz\t5\n"
      "u3\tz\t6\n");
  auto out = kcore_filter(raw, 2);
  CHECK(out.records.size() == 4);
  CHECK(out.items.find("z") == -1);
  CHECK(out.users.find("u3") == -1);
}

TEST_CASE("kcore_filter matches a brute-force oracle on small random logs") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = std::uniform_int_distribution<int>(4, 14)(rng);
    std::ostringstream os;
    std::set<std::pair<int, int>> used;
    for (int r = 0; r < n; ++r) {
      int u = std::uniform_int_distribution<int>(0, 4)(rng);
      int i = std::uniform_int_distribution<int>(0, 4)(rng);
      os << 'u' << u << "\ti" << i << '\t' << r << '\n';
    }
    auto raw = parse(os.str());
    for (int k : {1, 2, 3}) {
      const auto expected = brute_force_kcore(raw.records, k);
      if (expected.empty()) {
        CHECK_THROWS_AS(kcore_filter(raw, k), DataError);
        continue;
      }
      auto out = kcore_filter(raw, k);
      REQUIRE(out.records.size() == expected.size());
      std::size_t j = 0;
      for (std::size_t r : expected) {
        CHECK(out.users.key(out.records[j].user) == raw.users.key(raw.records[r].user));
        CHECK(out.items.key(out.records[j].item) == raw.items.key(raw.records[r].item));
        CHECK(out.records[j].timestamp == raw.records[r].timestamp);
        ++j;
      }
      auto again = kcore_filter(out, k);
      CHECK(again.records.size() == out.records.size());
    }
  }
}

TEST_CASE("kcore_filter rejects k < 1 and reports an eliminated dataset") {
  auto raw = parse("a\tx\t1\n");
  CHECK_THROWS_AS(kcore_filter(raw, 0), ContractError);
  try {
    kcore_filter(raw, 5);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("eliminated") != std::string::npos);
  }
}

TEST_CASE("build_sequences orders by timestamp in first-appearance id order") {
  auto raw = parse("b\ty\t50\na\tx\t30\nb\tx\t10\nb\tz\t50\n");
  auto seqs = build_sequences(raw);
  REQUIRE(seqs.size() == 2);
  CHECK(seqs[0].user_id == 0);  // "b" appeared first
  CHECK(seqs[0].items == std::vector<int>{1, 0, 2});
  CHECK(seqs[0].timestamps == std::vector<std::int64_t>{10, 50, 50});
}

TEST_CASE("leave_one_out_split examples") {
  std::vector<InteractionSequence> seqs = {{0, {7, 8, 9}, {1, 2, 3}}, {1, {4, 5}, {1, 2}}};
  auto split = leave_one_out_split(seqs, 10, 50);
  REQUIRE(split.n_users() == 1);
  CHECK(split.dropped_users == 1);
  auto valid = evaluation_examples(split, SplitPart::valid)[0];
  auto test = evaluation_examples(split, SplitPart::test)[0];
  CHECK(valid.target == 8);
  CHECK(test.target == 9);
  auto vctx = context_of(split, valid);
  auto tctx = context_of(split, test);
  CHECK(std::vector<int>(vctx.items.begin(), vctx.items.end()) == std::vector<int>{7});
  CHECK(std::vector<int>(tctx.items.begin(), tctx.items.end()) == std::vector<int>{7, 8});
  CHECK(training_examples(split).empty());
}

TEST_CASE("leave_one_out views partition every sequence (100 random users)") {
  std::mt19937_64 rng(23);
  std::vector<InteractionSequence> seqs;
  for (int u = 0; u < 100; ++u) {
    InteractionSequence s;
    s.user_id = u;
    const int n = std::uniform_int_distribution<int>(1, 30)(rng);
    for (int l = 0; l < n; ++l) {
      s.items.push_back(std::uniform_int_distribution<int>(0, 49)(rng));
      s.timestamps.push_back(l * 10);
    }
    seqs.push_back(s);
  }
  auto split = leave_one_out_split(seqs, 50, 8);
  const auto train = training_examples(split);
  const auto valid = evaluation_examples(split, SplitPart::valid);
  const auto test = evaluation_examples(split, SplitPart::test);
  std::size_t expected_dropped = 0;
  for (const auto& s : seqs) expected_dropped += s.length() < 3;
  CHECK(split.dropped_users == expected_dropped);

  for (int u = 0; u < split.n_users(); ++u) {
    const auto& seq = split.users[static_cast<std::size_t>(u)];
    const int n = seq.length();
    // Exhaustive position labelling: train holds [0, n-2), valid n-2, test n-1.
    std::vector<int> label(static_cast<std::size_t>(n), 0);
    for (int p = 0; p < n - 2; ++p) label[static_cast<std::size_t>(p)] |= 1;
    label[static_cast<std::size_t>(valid[static_cast<std::size_t>(u)].end)] |= 2;
    label[static_cast<std::size_t>(test[static_cast<std::size_t>(u)].end)] |= 4;
    for (int p = 0; p < n; ++p) {
      const int l = label[static_cast<std::size_t>(p)];
      CHECK((l == 1 || l == 2 || l == 4));
    }
    for (const auto& ex : train) {
      if (ex.user != u) continue;
      CHECK(ex.end < n - 2);
      auto ctx = context_of(split, ex);
      CHECK(static_cast<int>(ctx.items.size()) <= split.max_seq_len);
      CHECK(ctx.items.data() + ctx.items.size() == seq.items.data() + ex.end);
    }
    auto tctx = context_of(split, test[static_cast<std::size_t>(u)]);
    CHECK(static_cast<int>(tctx.items.size()) == std::min(n - 1, split.max_seq_len));
  }
}

TEST_CASE("feature matrix files") {
  auto dir = temp_dir("features");
  std::mt19937_64 rng(3);
  std::normal_distribution<float> nd;
  Matrix<float> m(12, 384);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  save_feature_matrix(dir / "f.fm", m);
  auto loaded = load_modal_features(dir / "f.fm", 12, 384);
  CHECK(loaded.matrix.rows() == 12);
  CHECK(loaded.matrix.cols() == 384);
  CHECK(loaded.missing_items.empty());
  CHECK(std::memcmp(loaded.matrix.data(), m.data(), sizeof(float) * static_cast<std::size_t>(m.size())) == 0);

  // Header bytes.
  std::ifstream in(dir / "f.fm", std::ios::binary);
  char head[24];
  in.read(head, 24);
  CHECK(std::string(head, 8) == "RODPOFM1");
  std::uint64_t rows, cols;
  std::memcpy(&rows, head + 8, 8);
  std::memcpy(&cols, head + 16, 8);
  CHECK(rows == 12);
  CHECK(cols == 384);
  CHECK(fs::file_size(dir / "f.fm") == 24 + 12 * 384 * 4);

  m.row(5).setConstant(std::numeric_limits<float>::quiet_NaN());
  save_feature_matrix(dir / "g.fm", m);
  auto g = load_modal_features(dir / "g.fm", 12);
  CHECK(g.missing_items == std::vector<int>{5});
  CHECK(g.matrix.row(5).isZero());

  CHECK_THROWS_AS(load_modal_features(dir / "f.fm", 12, 128), DataError);
  CHECK_THROWS_AS(load_modal_features(dir / "f.fm", 11), DataError);
  std::ofstream(dir / "bad.fm") << "NOTMAGIC";
  CHECK_THROWS_AS(read_feature_matrix(dir / "bad.fm"), DataError);
}

TEST_CASE("synthetic generator is deterministic and honours its invariants") {
  SyntheticConfig cfg;
  cfg.n_users = 200;
  cfg.n_items = 120;
  cfg.seed = 5;
  auto a = generate_synthetic(cfg);
  auto b = generate_synthetic(cfg);
  CHECK(a.truth.utility == b.truth.utility);
  CHECK(a.truth.exposure == b.truth.exposure);
  CHECK(a.truth.false_negatives == b.truth.false_negatives);
  CHECK(a.catalog.text == b.catalog.text);
  CHECK(a.catalog.image == b.catalog.image);
  REQUIRE(a.split.n_users() == b.split.n_users());
  for (int u = 0; u < a.split.n_users(); ++u) {
    CHECK(a.split.users[static_cast<std::size_t>(u)].items == b.split.users[static_cast<std::size_t>(u)].items);
    CHECK(a.split.users[static_cast<std::size_t>(u)].timestamps ==
          b.split.users[static_cast<std::size_t>(u)].timestamps);
  }

  CHECK(a.split.n_users() == cfg.n_users);
  for (const auto& s : a.split.users) {
    const auto u = s.user_id;
    CHECK(s.length() >= 3);
    CHECK(std::is_sorted(s.timestamps.begin(), s.timestamps.end()));
    std::set<int> seen(s.items.begin(), s.items.end());
    CHECK(seen.size() == s.items.size());
    for (int i : s.items) CHECK(a.truth.exposed(u, i));
    const auto decile = top_decile(a.truth.utility.row(u));
    const std::set<int> decile_set(decile.begin(), decile.end());
    // Kth largest utility bounds every false negative from below.
    std::vector<float> row(a.truth.utility.row(u).data(), a.truth.utility.row(u).data() + cfg.n_items);
    std::sort(row.begin(), row.end(), std::greater<>());
    const float cutoff = row[decile.size() - 1];
    for (int i : a.truth.false_negatives[static_cast<std::size_t>(u)]) {
      CHECK(!seen.count(i));
      CHECK(!a.truth.exposed(u, i));
      CHECK(decile_set.count(i));
      CHECK(a.truth.utility(u, i) >= cutoff);
    }
    std::size_t expected = 0;
    for (int i : decile) expected += !a.truth.exposed(u, i);
    CHECK(a.truth.false_negatives[static_cast<std::size_t>(u)].size() == expected);
  }

  cfg.seed = 6;
  auto c = generate_synthetic(cfg);
  CHECK(c.truth.utility != a.truth.utility);
}

TEST_CASE("synthetic with full exposure has no false negatives") {
  SyntheticConfig cfg;
  cfg.n_users = 50;
  cfg.n_items = 40;
  cfg.exposure_rate = 1.0;
  auto ds = generate_synthetic(cfg);
  for (const auto& fn : ds.truth.false_negatives) CHECK(fn.empty());
  CHECK(ds.truth.mean_false_negatives() == 0.0);
}

TEST_CASE("synthetic parameter validation") {
  SyntheticConfig cfg;
  cfg.exposure_rate = 0.0;
  CHECK_THROWS_AS(generate_synthetic(cfg), ConfigError);
  cfg.exposure_rate = 0.3;
  cfg.n_users = 0;
  CHECK_THROWS_AS(generate_synthetic(cfg), ConfigError);
  SyntheticConfig sparse;
  sparse.n_users = 5;
  sparse.n_items = 3;
  sparse.exposure_rate = 0.01;
  sparse.max_retries = 3;
  CHECK_THROWS_AS(generate_synthetic(sparse), DataError);
}

TEST_CASE("mean false-negative set size is stable across seeds") {
  // Monte-Carlo estimate over 10 seeds; expected value is 0.7 * 50 = 35.
  SyntheticConfig cfg;
  cfg.n_users = 1000;
  cfg.n_items = 500;
  cfg.exposure_rate = 0.3;
  cfg.text_dim = 0;
  cfg.image_dim = 0;
  std::vector<double> means;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    cfg.seed = seed;
    means.push_back(generate_synthetic(cfg).truth.mean_false_negatives());
  }
  const double grand = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(means.size());
  MESSAGE("mean false-negative set size " << grand);
  CHECK(grand == doctest::Approx(35.0).epsilon(0.05));
  for (double m : means) CHECK(std::abs(m - grand) <= 0.1 * grand);
}

TEST_CASE("batch iterator") {
  std::vector<InteractionSequence> seqs;
  // One user with 12 items yields 9 training examples; a second adds 1.
  InteractionSequence s{0, {}, {}};
  for (int i = 0; i < 12; ++i) {
    s.items.push_back(i);
    s.timestamps.push_back(100 + i);
  }
  seqs.push_back(s);
  seqs.push_back({1, {3, 4, 5, 6}, {1, 2, 3, 4}});
  auto split = leave_one_out_split(seqs, 20, 4);
  auto examples = training_examples(split);
  REQUIRE(examples.size() == 10);

  BatchIterator it(split, examples, 3, 99);
  it.begin_epoch();
  std::vector<int> sizes;
  std::multiset<int> targets;
  std::vector<int> first_order;
  Batch b;
  while (it.next(b)) {
    sizes.push_back(b.size());
    for (int t : b.targets) {
      targets.insert(t);
      first_order.push_back(t);
    }
    for (int r = 0; r < b.size(); ++r) {
      auto row = b.row(r);
      // Left padded: padding ids only before the first real item.
      bool seen_real = false;
      for (int id : row) {
        if (id != split.padding_id()) seen_real = true;
        else CHECK_FALSE(seen_real);
      }
      CHECK(seen_real);
    }
  }
  CHECK(sizes == std::vector<int>{3, 3, 3, 1});
  std::multiset<int> expected;
  for (const auto& e : examples) expected.insert(e.target);
  CHECK(targets == expected);

  BatchIterator again(split, examples, 3, 99);
  again.begin_epoch();
  std::vector<int> second_order;
  while (again.next(b)) {
    for (int t : b.targets) second_order.push_back(t);
  }
  CHECK(first_order == second_order);
  CHECK_THROWS_AS(BatchIterator(split, examples, 0, 1), ContractError);

  // Truncation keeps the most recent max_seq_len items.
  auto batch = make_batch(split, std::vector<Example>{{0, 9, 9}});
  auto row = batch.row(0);
  CHECK(std::vector<int>(row.begin(), row.end()) == std::vector<int>{5, 6, 7, 8});
}

TEST_CASE("dataset directory round trip") {
  SyntheticConfig cfg;
  cfg.n_users = 30;
  cfg.n_items = 40;
  cfg.seed = 2;
  auto ds = generate_synthetic(cfg);
  auto dir = temp_dir("store");
  save_synthetic(dir, ds);
  auto loaded = load_dataset(dir);
  REQUIRE(loaded.truth.has_value());
  CHECK(loaded.split.n_users() == ds.split.n_users());
  CHECK(loaded.split.n_items == ds.split.n_items);
  for (int u = 0; u < ds.split.n_users(); ++u) {
    CHECK(loaded.split.users[static_cast<std::size_t>(u)].items == ds.split.users[static_cast<std::size_t>(u)].items);
    CHECK(loaded.split.users[static_cast<std::size_t>(u)].timestamps ==
          ds.split.users[static_cast<std::size_t>(u)].timestamps);
  }
  CHECK(loaded.catalog.text == ds.catalog.text);
  CHECK(loaded.catalog.image == ds.catalog.image);
  CHECK(loaded.catalog.popularity == ds.catalog.popularity);
  CHECK(loaded.truth->utility == ds.truth.utility);
  CHECK(loaded.truth->exposure == ds.truth.exposure);
  CHECK(loaded.truth->false_negatives == ds.truth.false_negatives);

  // The emitted raw log reproduces the same sequences through the ingest path.
  auto raw = load_interactions(dir / files::interactions);
  auto seqs = build_sequences(raw);
  CHECK(seqs.size() == static_cast<std::size_t>(ds.split.n_users()));
}

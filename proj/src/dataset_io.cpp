#include "sqlsynth/dataset_io.hpp"

#include "sqlsynth/prompts.hpp"
#include "sqlsynth/sql_analysis.hpp"
#include "sqlsynth/text_util.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace sqlsynth {

std::vector<T2SExample> read_jsonl(const std::filesystem::path& path) { return read_examples_jsonl(path); }

void write_jsonl(const std::filesystem::path& path, const std::vector<T2SExample>& examples) {
    write_examples_jsonl(path, examples);
}

// ---------------------------------------------------------------------------

namespace {

GoldRecord gold_from_json(const nlohmann::json& j, std::size_t position) {
    GoldRecord g;
    if (j.contains("question_id")) {
        const auto& id = j["question_id"];
        g.question_id = id.is_string() ? id.get<std::string>() : id.dump();
    } else {
        g.question_id = std::to_string(position);
    }
    g.db_id = j.at("db_id").get<std::string>();
    g.question = j.value("question", std::string());
    g.evidence = j.value("evidence", std::string());
    if (j.contains("SQL")) {
        g.sql = j["SQL"].get<std::string>();
    } else {
        g.sql = j.at("sql").get<std::string>();
    }
    g.difficulty = j.value("difficulty", std::string());
    return g;
}

}  // namespace

std::vector<GoldRecord> read_gold(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    std::vector<GoldRecord> out;
    if (trim(text).starts_with("[")) {
        const auto arr = nlohmann::json::parse(text);
        for (std::size_t i = 0; i < arr.size(); ++i) {
            try {
                out.push_back(gold_from_json(arr[i], i));
            } catch (const std::exception& e) {
                throw std::runtime_error(path.string() + ": record " + std::to_string(i) + ": " + e.what());
            }
        }
        return out;
    }
    std::istringstream lines(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(lines, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            out.push_back(gold_from_json(nlohmann::json::parse(line), out.size()));
        } catch (const std::exception& e) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::vector<T2SExample> gold_as_examples(const std::vector<GoldRecord>& gold, std::string_view db_id) {
    std::vector<T2SExample> out;
    for (const auto& g : gold) {
        if (!db_id.empty() && g.db_id != db_id) continue;
        if (g.difficulty.empty()) throw std::invalid_argument("gold question " + g.question_id + " has no difficulty");
        T2SExample e;
        e.id = g.question_id;
        e.db_id = g.db_id;
        e.sql = g.sql;
        e.question = g.question;
        e.difficulty = level_from_string(g.difficulty);
        e.judge_verdict = e.executable = true;
        if (!g.evidence.empty()) e.extra["evidence"] = g.evidence;
        out.push_back(std::move(e));
    }
    return out;
}

// ---------------------------------------------------------------------------

void SplitConfig::validate() const {
    double sum = 0;
    for (const double r : ratios) {
        if (!(r >= 0)) throw std::invalid_argument("split ratios must be non-negative");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("split ratios must sum to 1");
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios) {
    std::array<std::size_t, 3> sizes{};
    std::array<double, 3> frac{};
    std::size_t used = 0;
    for (std::size_t k = 0; k < 3; ++k) {
        const double q = static_cast<double>(n) * ratios[k];
        const double f = std::floor(q + 1e-9);
        sizes[k] = static_cast<std::size_t>(f);
        frac[k] = q - f;
        used += sizes[k];
    }
    while (used < n) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < 3; ++k) {
            if (frac[k] > frac[best] + 1e-12) best = k;
        }
        ++sizes[best];
        frac[best] = -1;
        ++used;
    }
    while (used > n) {  // rounding can only overshoot through the epsilon
        for (std::size_t k = 3; k-- > 0;) {
            if (sizes[k] > 0 && used > n) {
                --sizes[k];
                --used;
            }
        }
    }
    return sizes;
}

namespace {

// Fisher-Yates driven by raw engine output so results do not depend on the
// standard library's distribution implementation.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng() % i]);
    return p;
}

std::set<ColumnRef> columns_of(const T2SExample& e, const DatabaseSchema& schema) {
    try {
        return extract_schema_elements(e.sql, schema).referenced;
    } catch (const std::exception&) {
        return {};
    }
}

}  // namespace

SplitResult split_dataset(const std::vector<T2SExample>& examples, const DatabaseSchema& schema,
                          const SplitConfig& config) {
    config.validate();
    if (examples.empty()) throw std::invalid_argument("cannot split an empty dataset");
    {
        std::set<std::string> ids;
        for (const auto& e : examples) {
            if (!ids.insert(e.id).second) throw std::invalid_argument("duplicate example id " + e.id);
        }
    }
    static const std::array<const char*, 3> names{"train", "dev", "test"};
    const std::size_t n = examples.size();
    const auto sizes = split_sizes(n, config.ratios);
    const auto order = seeded_permutation(n, config.seed);
    std::vector<std::size_t> rank(n);
    for (std::size_t i = 0; i < n; ++i) rank[order[i]] = i;

    SplitResult result;
    std::vector<int> assigned(n, -1);
    std::array<std::size_t, 3> filled{};

    if (config.coverage) {
        std::vector<std::set<ColumnRef>> cols(n);
        std::set<ColumnRef> used_anywhere;
        for (std::size_t i = 0; i < n; ++i) {
            cols[i] = columns_of(examples[i], schema);
            used_anywhere.insert(cols[i].begin(), cols[i].end());
        }
        std::array<std::size_t, 3> by_size{0, 1, 2};
        std::stable_sort(by_size.begin(), by_size.end(), [&](std::size_t a, std::size_t b) { return sizes[a] < sizes[b]; });
        for (const auto k : by_size) {
            std::set<ColumnRef> uncovered = used_anywhere;
            while (filled[k] < sizes[k] && !uncovered.empty()) {
                std::size_t best = n;
                std::size_t best_gain = 0;
                for (const auto i : order) {
                    if (assigned[i] >= 0) continue;
                    std::size_t gain = 0;
                    for (const auto& c : cols[i]) gain += uncovered.count(c);
                    if (gain > best_gain) {
                        best = i;
                        best_gain = gain;
                    }
                }
                if (best == n) break;
                assigned[best] = static_cast<int>(k);
                ++filled[k];
                for (const auto& c : cols[best]) uncovered.erase(c);
            }
            for (const auto& c : uncovered) {
                result.warnings.push_back(std::string(names[k]) + " split does not cover " + c.table + "." + c.column);
            }
        }
        for (const auto& c : schema.all_columns()) {
            if (!used_anywhere.count(c)) result.warnings.push_back("no example uses " + c.table + "." + c.column);
        }
    }

    std::vector<std::size_t> rest;
    for (const auto i : order) {
        if (assigned[i] < 0) rest.push_back(i);
    }
    if (config.stratify) {
        std::stable_sort(rest.begin(), rest.end(), [&](std::size_t a, std::size_t b) {
            return examples[a].difficulty < examples[b].difficulty;
        });
    }
    // Smooth apportionment: each split receives its share of every stretch of
    // the (difficulty-sorted) sequence, so level proportions carry over.
    std::array<std::size_t, 3> remaining{};
    std::size_t m = 0;
    for (std::size_t k = 0; k < 3; ++k) {
        remaining[k] = sizes[k] - filled[k];
        m += remaining[k];
    }
    std::array<std::size_t, 3> got{};
    for (std::size_t j = 0; j < rest.size(); ++j) {
        std::size_t best = 3;
        long double best_deficit = 0;
        for (std::size_t k = 0; k < 3; ++k) {
            if (got[k] >= remaining[k]) continue;
            const long double deficit = static_cast<long double>(remaining[k]) * static_cast<long double>(j + 1) -
                                        static_cast<long double>(got[k]) * static_cast<long double>(m);
            if (best == 3 || deficit > best_deficit) {
                best = k;
                best_deficit = deficit;
            }
        }
        assigned[rest[j]] = static_cast<int>(best);
        ++got[best];
    }

    for (std::size_t k = 0; k < 3; ++k) result.splits[k].name = names[k];
    for (std::size_t i = 0; i < n; ++i) result.splits[static_cast<std::size_t>(assigned[i])].examples.push_back(examples[i]);
    return result;
}

// ---------------------------------------------------------------------------

StatsReport compute_stats(const std::vector<T2SExample>& examples, const DatabaseSchema& schema) {
    StatsReport r;
    for (const auto level : {Level::simple, Level::moderate, Level::challenging, Level::window}) {
        r.levels[to_string(level)] = {};
    }
    for (const auto& c : schema.all_columns()) r.column_usage[c] = 0;
    r.column_count = r.column_usage.size();
    r.total = examples.size();
    r.empty = examples.empty();

    std::map<std::string, std::pair<std::size_t, std::size_t>> parsed;  // level -> (parsed, with aggregation)
    std::map<std::string, double> joins;
    std::size_t all_parsed = 0;
    std::size_t all_agg = 0;
    double all_joins = 0;
    for (const auto& e : examples) {
        const auto level = to_string(e.difficulty);
        ++r.levels[level].count;
        QueryFeatures f;
        std::set<ColumnRef> cols;
        try {
            f = classify_features(e.sql);
            cols = extract_schema_elements(e.sql, schema).referenced;
        } catch (const std::exception&) {
            ++r.unparseable;
            continue;
        }
        ++parsed[level].first;
        parsed[level].second += f.has_aggregation ? 1 : 0;
        joins[level] += static_cast<double>(f.join_count);
        ++all_parsed;
        all_agg += f.has_aggregation ? 1 : 0;
        all_joins += static_cast<double>(f.join_count);
        r.window_queries += f.has_window ? 1 : 0;
        for (const auto& c : cols) {
            if (auto it = r.column_usage.find(c); it != r.column_usage.end()) ++it->second;
        }
    }
    for (auto& [level, s] : r.levels) {
        const auto& [n, agg] = parsed[level];
        if (n == 0) continue;
        s.mean_joins = joins[level] / static_cast<double>(n);
        s.aggregation_rate = 100.0 * static_cast<double>(agg) / static_cast<double>(n);
    }
    r.overall.count = r.total;
    if (all_parsed > 0) {
        r.overall.mean_joins = all_joins / static_cast<double>(all_parsed);
        r.overall.aggregation_rate = 100.0 * static_cast<double>(all_agg) / static_cast<double>(all_parsed);
    }
    for (const auto& [c, n] : r.column_usage) {
        if (n == 0) r.unused_columns.push_back(c);
    }
    if (r.column_count > 0) {
        r.unused_rate = 100.0 * static_cast<double>(r.unused_columns.size()) / static_cast<double>(r.column_count);
    }
    return r;
}

namespace {

nlohmann::ordered_json level_json(const LevelStats& s) {
    nlohmann::ordered_json j;
    j["count"] = s.count;
    j["mean_joins"] = s.mean_joins;
    j["aggregation_rate"] = s.aggregation_rate;
    return j;
}

std::string fixed2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string fixed3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

}  // namespace

nlohmann::ordered_json to_json(const StatsReport& r) {
    nlohmann::ordered_json j;
    j["empty"] = r.empty;
    j["total"] = r.total;
    j["unparseable"] = r.unparseable;
    j["window_queries"] = r.window_queries;
    j["overall"] = level_json(r.overall);
    auto& levels = j["levels"] = nlohmann::ordered_json::object();
    for (const auto level : {Level::simple, Level::moderate, Level::challenging, Level::window}) {
        levels[to_string(level)] = level_json(r.levels.at(to_string(level)));
    }
    j["column_count"] = r.column_count;
    j["unused_column_count"] = r.unused_columns.size();
    j["unused_column_rate"] = r.unused_rate;
    auto& unused = j["unused_columns"] = nlohmann::ordered_json::array();
    for (const auto& c : r.unused_columns) unused.push_back(c.table + "." + c.column);
    auto& usage = j["column_usage"] = nlohmann::ordered_json::object();
    for (const auto& [c, n] : r.column_usage) usage[c.table + "." + c.column] = n;
    return j;
}

std::string stats_markdown(const std::vector<std::pair<std::string, StatsReport>>& reports) {
    auto count = [](const StatsReport& r, Level l) { return std::to_string(r.levels.at(to_string(l)).count); };
    std::string out = "### Question counts per level\n\n"
                      "| Dataset | Overall | Simple | Moderate | Challenging | Window level | Window functions |\n"
                      "|---|---|---|---|---|---|---|\n";
    for (const auto& [name, r] : reports) {
        out += "| " + name + " | " + std::to_string(r.total) + " | " + count(r, Level::simple) + " | " +
               count(r, Level::moderate) + " | " + count(r, Level::challenging) + " | " + count(r, Level::window) +
               " | " + std::to_string(r.window_queries) + " |\n";
    }
    out += "\n### Unused columns\n\n| Dataset | Unused Column Count | Unused Column Rate (%) |\n|---|---|---|\n";
    for (const auto& [name, r] : reports) {
        out += "| " + name + " | " + std::to_string(r.unused_columns.size()) + " | " + fixed2(r.unused_rate) + " |\n";
    }
    out += "\n### Joins and aggregation\n\n| Dataset | Level | Questions | Mean joins | Aggregation rate (%) |\n"
           "|---|---|---|---|---|\n";
    for (const auto& [name, r] : reports) {
        for (const auto level : {Level::simple, Level::moderate, Level::challenging, Level::window}) {
            const auto& s = r.levels.at(to_string(level));
            out += "| " + name + " | " + to_string(level) + " | " + std::to_string(s.count) + " | " +
                   fixed3(s.mean_joins) + " | " + fixed2(s.aggregation_rate) + " |\n";
        }
        out += "| " + name + " | all | " + std::to_string(r.total) + " | " + fixed3(r.overall.mean_joins) + " | " +
               fixed2(r.overall.aggregation_rate) + " |\n";
    }
    if (std::any_of(reports.begin(), reports.end(), [](const auto& p) { return p.second.unparseable > 0; })) {
        out += "\nUnparseable queries:";
        for (const auto& [name, r] : reports) out += " " + name + "=" + std::to_string(r.unparseable);
        out += "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------

std::string to_string(DatasetKind k) { return k == DatasetKind::t2s ? "T2S" : "T2SWS"; }

DatasetKind dataset_kind_from_string(std::string_view s) {
    if (iequals(s, "T2S")) return DatasetKind::t2s;
    if (iequals(s, "T2SWS")) return DatasetKind::t2sws;
    throw std::invalid_argument("unknown dataset kind: " + std::string(s));
}

std::string SftConfig::name() const {
    std::string n = to_string(kind) + "-fs" + std::to_string(fs_count);
    if (fs_count > 0) n += fs_reasoning ? "-r" : "-nr";
    return n;
}

std::vector<SftConfig> standard_sft_configs() {
    std::vector<SftConfig> out;
    for (const auto kind : {DatasetKind::t2s, DatasetKind::t2sws}) {
        out.push_back({kind, 0, false});
        out.push_back({kind, 6, false});
        out.push_back({kind, 6, true});
    }
    return out;
}

nlohmann::ordered_json to_json(const SftRecord& r) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["prompt"] = r.prompt;
    j["completion"] = r.completion;
    j["config"] = {{"dataset_kind", to_string(r.config.kind)},
                   {"fs_count", r.config.fs_count},
                   {"fs_reasoning", r.config.fs_reasoning}};
    return j;
}

std::optional<std::string> reasoning_trace(const T2SExample& e) {
    if (!e.reasoning) return std::nullopt;
    std::string r = *e.reasoning;
    const std::string tail = "\n\n" + e.sql;
    if (r.size() >= tail.size() && r.compare(r.size() - tail.size(), tail.size(), tail) == 0) {
        r.resize(r.size() - tail.size());
    }
    r = trim(r);
    if (r.empty()) return std::nullopt;
    return r;
}

std::vector<SftRecord> export_sft(const std::vector<T2SExample>& examples, const DatabaseSchema& schema,
                                  const SftConfig& config, const std::map<std::string, FilteredSchema>* filtered_schemas,
                                  const std::vector<T2SExample>* fewshot_pool) {
    if (config.kind == DatasetKind::t2sws) {
        std::vector<std::string> missing;
        for (const auto& e : examples) {
            if (!filtered_schemas || !filtered_schemas->count(e.id)) missing.push_back(e.id);
        }
        if (!missing.empty()) {
            const std::size_t shown = std::min<std::size_t>(missing.size(), 10);
            std::string msg = "no filtered schema for " + std::to_string(missing.size()) + " examples: " +
                              join(std::vector<std::string>(missing.begin(), missing.begin() + shown), ", ");
            if (shown < missing.size()) msg += ", ...";
            throw std::invalid_argument(msg);
        }
    }
    std::unique_ptr<Bm25Index> index;
    std::vector<std::string> pool_ids;
    if (config.fs_count > 0) {
        if (!fewshot_pool || fewshot_pool->empty()) throw std::invalid_argument("few-shot export needs a non-empty pool");
        index = std::make_unique<Bm25Index>(*fewshot_pool);
        for (const auto& e : *fewshot_pool) pool_ids.push_back(e.id);
    }

    std::vector<SftRecord> out;
    std::vector<std::string> short_of_shots;
    for (const auto& e : examples) {
        std::vector<std::string> blocks;
        if (config.kind == DatasetKind::t2sws) {
            blocks.push_back(std::string(schema_block_heading) + "\n" +
                             rtrim(render_filtered_schema(schema, filtered_schemas->at(e.id))));
        }
        if (index) {
            std::size_t taken = 0;
            const auto self_sql = normalize_sql_whitespace(e.sql);
            for (const auto& s : index->rank(e.question, &pool_ids)) {
                if (taken == config.fs_count) break;
                const auto& d = index->example(s.id);
                if (d.id == e.id || (d.question == e.question && normalize_sql_whitespace(d.sql) == self_sql)) continue;
                const auto trace = reasoning_trace(d);
                if (config.fs_reasoning && !trace) continue;
                ++taken;
                std::string block = std::string(fewshot_block_heading) + std::to_string(taken) + "\nQuestion: " + d.question + "\n";
                if (config.fs_reasoning) block += "Reasoning:\n" + *trace + "\n";
                block += "SQL:\n" + d.sql;
                blocks.push_back(std::move(block));
            }
            if (taken < config.fs_count) {
                short_of_shots.push_back(e.id);
                continue;
            }
        }
        SftRecord rec;
        rec.id = e.id;
        rec.config = config;
        rec.prompt = render_prompt(templates::sql_generation,
                                   {{"DB_ID", e.db_id}, {"AUGMENTATION", join(blocks, "\n\n")}, {"QUESTION", e.question}});
        if (blocks.empty()) {
            const auto pos = rec.prompt.find("\n\n\n\n");
            if (pos != std::string::npos) rec.prompt.replace(pos, 4, "\n\n");
        }
        const auto trace = reasoning_trace(e);
        rec.completion = (trace ? "<reasoning>" + *trace + "</reasoning>" : std::string()) + "<answer>" + e.sql + "</answer>";
        out.push_back(std::move(rec));
    }
    if (!short_of_shots.empty()) {
        throw std::invalid_argument("not enough few-shot examples for: " + join(short_of_shots, ", "));
    }
    return out;
}

}  // namespace sqlsynth

#include "sqlsynth/evaluation.hpp"

#include "sqlsynth/text_util.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <unordered_map>

namespace sqlsynth {

namespace {

std::optional<double> numeric(const Cell& c) {
    if (const auto* i = std::get_if<std::int64_t>(&c)) return static_cast<double>(*i);
    if (const auto* d = std::get_if<double>(&c)) return *d;
    return std::nullopt;
}

// Total order used to line rows up before an unordered comparison.
int compare_cells(const Cell& a, const Cell& b) {
    auto rank = [](const Cell& c) {
        if (std::holds_alternative<std::monostate>(c)) return 0;
        if (std::holds_alternative<std::string>(c)) return 2;
        return 1;
    };
    const int ra = rank(a);
    const int rb = rank(b);
    if (ra != rb) return ra < rb ? -1 : 1;
    if (ra == 1) {
        const double x = *numeric(a);
        const double y = *numeric(b);
        return x < y ? -1 : (y < x ? 1 : 0);
    }
    if (ra == 2) {
        const auto x = rtrim(std::get<std::string>(a));
        const auto y = rtrim(std::get<std::string>(b));
        return x.compare(y) < 0 ? -1 : (x == y ? 0 : 1);
    }
    return 0;
}

bool row_less(const std::vector<Cell>& a, const std::vector<Cell>& b) {
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
        if (const int c = compare_cells(a[i], b[i]); c != 0) return c < 0;
    }
    return a.size() < b.size();
}

bool rows_equal(const std::vector<Cell>& a, const std::vector<Cell>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!cells_equal(a[i], b[i])) return false;
    }
    return true;
}

std::size_t width(const ResultTable& t) {
    if (!t.rows.empty()) return t.rows.front().size();
    return t.column_labels.size();
}

std::size_t cell_count(const ResultTable& t) {
    std::size_t n = 0;
    for (const auto& r : t.rows) n += r.size();
    return n;
}

std::string cell_key(const Cell& c) {
    if (std::holds_alternative<std::monostate>(c)) return "n:";
    if (const auto d = numeric(c)) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "d:%.17g", *d == 0 ? 0.0 : *d);
        return buf;
    }
    return "s:" + rtrim(std::get<std::string>(c));
}

// Sorted cell keys: rows with equal keys overlap in every cell.
std::string multiset_key(const std::vector<Cell>& row) {
    std::vector<std::string> keys;
    keys.reserve(row.size());
    for (const auto& c : row) keys.push_back(cell_key(c));
    std::sort(keys.begin(), keys.end());
    std::string out;
    for (const auto& k : keys) {
        out += k;
        out += '\x1f';
    }
    return out;
}

}  // namespace

bool cells_equal(const Cell& a, const Cell& b) {
    const bool an = std::holds_alternative<std::monostate>(a);
    const bool bn = std::holds_alternative<std::monostate>(b);
    if (an || bn) return an && bn;
    const auto x = numeric(a);
    const auto y = numeric(b);
    if (x && y) {
        if (std::holds_alternative<std::int64_t>(a) && std::holds_alternative<std::int64_t>(b)) {
            return std::get<std::int64_t>(a) == std::get<std::int64_t>(b);
        }
        const double diff = std::abs(*x - *y);
        return diff <= std::max(cell_absolute_tolerance, cell_relative_tolerance * std::max(std::abs(*x), std::abs(*y)));
    }
    if (x || y) return false;
    return rtrim(std::get<std::string>(a)) == rtrim(std::get<std::string>(b));
}

int execution_accuracy(const ResultTable& pred, const ResultTable& gold, bool ordered) {
    if (pred.rows.size() != gold.rows.size()) return 0;
    if (width(pred) != width(gold)) return 0;
    if (ordered) {
        for (std::size_t i = 0; i < pred.rows.size(); ++i) {
            if (!rows_equal(pred.rows[i], gold.rows[i])) return 0;
        }
        return 1;
    }
    auto p = pred.rows;
    auto g = gold.rows;
    std::sort(p.begin(), p.end(), row_less);
    std::sort(g.begin(), g.end(), row_less);
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!rows_equal(p[i], g[i])) return 0;
    }
    return 1;
}

std::size_t row_overlap(const std::vector<Cell>& a, const std::vector<Cell>& b) {
    std::vector<bool> used(b.size(), false);
    std::size_t n = 0;
    for (const auto& x : a) {
        for (std::size_t j = 0; j < b.size(); ++j) {
            if (!used[j] && cells_equal(x, b[j])) {
                used[j] = true;
                ++n;
                break;
            }
        }
    }
    return n;
}

double f1_from_counts(std::size_t tp, std::size_t pred_cells, std::size_t gold_cells) {
    if (pred_cells == 0 && gold_cells == 0) return 1.0;
    if (pred_cells == 0 || gold_cells == 0 || tp == 0) return 0.0;
    const double p = static_cast<double>(tp) / static_cast<double>(pred_cells);
    const double r = static_cast<double>(tp) / static_cast<double>(gold_cells);
    return 2 * p * r / (p + r);
}

SoftF1 soft_f1_detail(const ResultTable& pred, const ResultTable& gold) {
    const std::size_t np = pred.rows.size();
    const std::size_t ng = gold.rows.size();
    std::vector<bool> pred_used(np, false);
    std::vector<bool> gold_used(ng, false);
    std::size_t tp = 0;

    // Rows whose cells coincide as multisets reach the largest possible overlap,
    // so pairing them first (pred order, lowest gold index) is what the greedy
    // loop below would do anyway; it just avoids the quadratic scan for them.
    if (np > 0 && ng > 0 && width(pred) == width(gold)) {
        std::unordered_map<std::string, std::vector<std::size_t>> gold_by_key;
        for (std::size_t g = ng; g-- > 0;) gold_by_key[multiset_key(gold.rows[g])].push_back(g);
        for (std::size_t p = 0; p < np; ++p) {
            auto it = gold_by_key.find(multiset_key(pred.rows[p]));
            if (it == gold_by_key.end() || it->second.empty()) continue;
            const auto g = it->second.back();
            it->second.pop_back();
            pred_used[p] = gold_used[g] = true;
            tp += pred.rows[p].size();
        }
    }

    struct Pair {
        std::size_t overlap;
        std::size_t p;
        std::size_t g;
    };
    std::vector<Pair> pairs;
    for (std::size_t p = 0; p < np; ++p) {
        if (pred_used[p]) continue;
        for (std::size_t g = 0; g < ng; ++g) {
            if (gold_used[g]) continue;
            if (const auto o = row_overlap(pred.rows[p], gold.rows[g]); o > 0) pairs.push_back({o, p, g});
        }
    }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
        if (a.overlap != b.overlap) return a.overlap > b.overlap;
        if (a.p != b.p) return a.p < b.p;
        return a.g < b.g;
    });
    for (const auto& x : pairs) {
        if (pred_used[x.p] || gold_used[x.g]) continue;
        pred_used[x.p] = gold_used[x.g] = true;
        tp += x.overlap;
    }

    SoftF1 r;
    r.tp = tp;
    r.fp = cell_count(pred) - tp;
    r.fn = cell_count(gold) - tp;
    r.f1 = f1_from_counts(tp, cell_count(pred), cell_count(gold));
    return r;
}

double soft_f1(const ResultTable& pred, const ResultTable& gold) { return soft_f1_detail(pred, gold).f1; }

QuestionBounds question_bounds(std::string question_id, const std::vector<CandidateScore>& scores) {
    if (scores.empty()) throw std::invalid_argument("question " + question_id + " has no scored candidates");
    QuestionBounds b;
    b.question_id = std::move(question_id);
    b.candidates = scores.size();
    b.ex_ub = b.ex_lb = scores.front().ex;
    b.f1_ub = b.f1_lb = scores.front().f1;
    for (const auto& s : scores) {
        b.ex_ub = std::max(b.ex_ub, s.ex);
        b.ex_lb = std::min(b.ex_lb, s.ex);
        b.f1_ub = std::max(b.f1_ub, s.f1);
        b.f1_lb = std::min(b.f1_lb, s.f1);
    }
    return b;
}

EvalOutcome aggregate_bounds(const std::vector<std::pair<std::string, std::vector<CandidateScore>>>& scores) {
    EvalOutcome out;
    for (const auto& [id, s] : scores) {
        out.per_question.push_back(question_bounds(id, s));
        const auto& b = out.per_question.back();
        out.ex_ub += b.ex_ub;
        out.ex_lb += b.ex_lb;
        out.f1_ub += b.f1_ub;
        out.f1_lb += b.f1_lb;
    }
    if (!scores.empty()) {
        const double k = 100.0 / static_cast<double>(scores.size());
        out.ex_ub *= k;
        out.ex_lb *= k;
        out.f1_ub *= k;
        out.f1_lb *= k;
    }
    return out;
}

SchemaElements linking_gold(std::string_view sql, const DatabaseSchema& schema) {
    const auto parsed = extract_schema_elements(sql, schema);
    return {parsed.referenced_tables, parsed.referenced};
}

SchemaElements elements_of(const FilteredSchema& fs) { return {fs.table_names(), fs.columns()}; }

namespace {

template <class T>
std::size_t intersection_size(const std::set<T>& a, const std::set<T>& b) {
    std::size_t n = 0;
    for (const auto& x : a) n += b.count(x);
    return n;
}

template <class T>
double recall(const std::set<T>& pred, const std::set<T>& gold) {
    if (gold.empty()) return 1.0;
    return static_cast<double>(intersection_size(pred, gold)) / static_cast<double>(gold.size());
}

template <class T>
double precision(const std::set<T>& pred, const std::set<T>& gold) {
    if (pred.empty()) return gold.empty() ? 1.0 : 0.0;
    return static_cast<double>(intersection_size(pred, gold)) / static_cast<double>(pred.size());
}

}  // namespace

LinkingMetrics linking_metrics(const std::vector<SchemaElements>& predicted, const std::vector<SchemaElements>& gold) {
    if (predicted.size() != gold.size()) throw std::invalid_argument("predicted and gold linking sets differ in size");
    LinkingMetrics m;
    m.questions = gold.size();
    if (gold.empty()) return m;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        m.table_recall += recall(predicted[i].tables, gold[i].tables);
        m.table_precision += precision(predicted[i].tables, gold[i].tables);
        m.column_recall += recall(predicted[i].columns, gold[i].columns);
        m.column_precision += precision(predicted[i].columns, gold[i].columns);
        if (intersection_size(gold[i].columns, predicted[i].columns) == gold[i].columns.size()) m.strict_recall_rate += 1;
    }
    const double k = 100.0 / static_cast<double>(gold.size());
    m.table_recall *= k;
    m.table_precision *= k;
    m.column_recall *= k;
    m.column_precision *= k;
    m.strict_recall_rate *= k;
    return m;
}

nlohmann::ordered_json to_json(const LinkingMetrics& m) {
    nlohmann::ordered_json j;
    j["questions"] = m.questions;
    j["TR"] = m.table_recall;
    j["TP"] = m.table_precision;
    j["CR"] = m.column_recall;
    j["CP"] = m.column_precision;
    j["SRR"] = m.strict_recall_rate;
    return j;
}

std::vector<PredictionRecord> read_predictions_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::vector<PredictionRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            PredictionRecord r;
            const auto& id = j.at("question_id");
            r.question_id = id.is_string() ? id.get<std::string>() : id.dump();
            r.candidates = j.at("candidates").get<std::vector<std::string>>();
            out.push_back(std::move(r));
        } catch (const std::exception& e) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

void write_predictions_jsonl(const std::filesystem::path& path, const std::vector<PredictionRecord>& preds) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& p : preds) {
        nlohmann::ordered_json j;
        j["question_id"] = p.question_id;
        j["candidates"] = p.candidates;
        out << j.dump() << '\n';
    }
}

DatabaseLocator directory_locator(std::filesystem::path dir) {
    return [dir = std::move(dir)](const std::string& db_id) {
        auto nested = dir / db_id / (db_id + ".sqlite");
        if (std::filesystem::exists(nested)) return nested;
        return dir / (db_id + ".sqlite");
    };
}

EvaluationReport evaluate(const std::vector<PredictionRecord>& predictions, const std::vector<GoldRecord>& gold,
                          const DatabaseLocator& locate, const ExecOptions& exec, std::size_t jobs) {
    std::map<std::string, const PredictionRecord*> by_id;
    for (const auto& p : predictions) {
        if (!by_id.emplace(p.question_id, &p).second) {
            throw std::invalid_argument("duplicate prediction for question " + p.question_id);
        }
    }
    std::set<std::string> gold_ids;
    for (const auto& g : gold) {
        if (!gold_ids.insert(g.question_id).second) throw std::invalid_argument("duplicate gold question " + g.question_id);
    }
    for (const auto& p : predictions) {
        if (!gold_ids.count(p.question_id)) throw std::invalid_argument("prediction for unknown question " + p.question_id);
    }

    std::mutex schema_mu;
    std::map<std::string, std::shared_ptr<const DatabaseSchema>> schemas;
    auto schema_for = [&](const std::string& db_id) {
        std::lock_guard lock(schema_mu);
        auto& s = schemas[db_id];
        if (!s) s = std::make_shared<const DatabaseSchema>(introspect_schema(locate(db_id)));
        return s;
    };

    EvaluationReport report;
    report.questions.resize(gold.size());
    auto score_one = [&](std::size_t i) {
        const auto& g = gold[i];
        auto& q = report.questions[i];
        q.question_id = g.question_id;
        q.db_id = g.db_id;
        const auto db = locate(g.db_id);
        const auto gold_run = execute_query(g.sql, db, exec);
        if (!gold_run.executable()) {
            q.gold_error = gold_run.error.empty() ? "gold query failed" : gold_run.error;
            return;
        }
        q.gold_truncated = gold_run.table.truncated;
        try {
            q.ordered = extract_schema_elements(g.sql, *schema_for(g.db_id)).has_top_level_order_by;
        } catch (const std::exception&) {
            q.ordered = false;
        }
        const auto it = by_id.find(g.question_id);
        if (it == by_id.end() || it->second->candidates.empty()) {
            q.missing_prediction = true;
            return;
        }
        for (const auto& sql : it->second->candidates) {
            CandidateResult c;
            c.sql = sql;
            const auto run = execute_query(sql, db, exec);
            if (run.executable()) {
                c.truncated = run.table.truncated;
                c.score.ex = execution_accuracy(run.table, gold_run.table, q.ordered);
                c.score.f1 = soft_f1(run.table, gold_run.table);
            } else {
                c.error = run.error.empty() ? "execution failed" : run.error;
            }
            q.candidates.push_back(std::move(c));
        }
    };

    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(gold.size());
    auto worker = [&] {
        for (std::size_t i = next++; i < gold.size(); i = next++) {
            try {
                score_one(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < std::max<std::size_t>(jobs, 1); ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    std::vector<std::pair<std::string, std::vector<CandidateScore>>> scores;
    for (const auto& q : report.questions) {
        if (q.gold_error) {
            ++report.gold_errors;
            continue;
        }
        if (q.missing_prediction) {
            ++report.missing_predictions;
            scores.push_back({q.question_id, {CandidateScore{}}});
            continue;
        }
        std::vector<CandidateScore> s;
        for (const auto& c : q.candidates) s.push_back(c.score);
        scores.emplace_back(q.question_id, std::move(s));
    }
    report.outcome = aggregate_bounds(scores);
    return report;
}

nlohmann::ordered_json to_json(const QuestionEvaluation& q) {
    nlohmann::ordered_json j;
    j["question_id"] = q.question_id;
    j["db_id"] = q.db_id;
    j["ordered"] = q.ordered;
    j["gold_error"] = q.gold_error ? nlohmann::ordered_json(*q.gold_error) : nlohmann::ordered_json();
    j["gold_truncated"] = q.gold_truncated;
    j["missing_prediction"] = q.missing_prediction;
    if (!q.gold_error && !q.candidates.empty()) {
        std::vector<CandidateScore> s;
        for (const auto& c : q.candidates) s.push_back(c.score);
        const auto b = question_bounds(q.question_id, s);
        j["ex_ub"] = b.ex_ub;
        j["ex_lb"] = b.ex_lb;
        j["f1_ub"] = b.f1_ub;
        j["f1_lb"] = b.f1_lb;
    }
    auto& cands = j["candidates"] = nlohmann::ordered_json::array();
    for (const auto& c : q.candidates) {
        nlohmann::ordered_json cj;
        cj["sql"] = c.sql;
        cj["ex"] = c.score.ex;
        cj["f1"] = c.score.f1;
        cj["error"] = c.error.empty() ? nlohmann::ordered_json() : nlohmann::ordered_json(c.error);
        cj["truncated"] = c.truncated;
        cands.push_back(std::move(cj));
    }
    return j;
}

nlohmann::ordered_json aggregate_json(const EvaluationReport& r) {
    std::size_t truncated = 0;
    for (const auto& q : r.questions) {
        truncated += q.gold_truncated ? 1 : 0;
        for (const auto& c : q.candidates) truncated += c.truncated ? 1 : 0;
    }
    nlohmann::ordered_json j;
    j["questions"] = r.questions.size();
    j["scored"] = r.outcome.per_question.size();
    j["gold_errors"] = r.gold_errors;
    j["missing_predictions"] = r.missing_predictions;
    j["truncated_results"] = truncated;
    j["ex_ub"] = r.outcome.ex_ub;
    j["ex_lb"] = r.outcome.ex_lb;
    j["f1_ub"] = r.outcome.f1_ub;
    j["f1_lb"] = r.outcome.f1_lb;
    return j;
}

std::string report_markdown(const EvaluationReport& r) {
    char row[256];
    std::snprintf(row, sizeof row, "| %zu | %.2f | %.2f | %.2f | %.2f |\n", r.outcome.per_question.size(),
                  r.outcome.ex_ub, r.outcome.ex_lb, r.outcome.f1_ub, r.outcome.f1_lb);
    std::string out = "| Questions | EX UB | EX LB | Soft F1 UB | Soft F1 LB |\n|---|---|---|---|---|\n";
    out += row;
    if (r.gold_errors || r.missing_predictions) {
        out += "\n" + std::to_string(r.gold_errors) + " gold queries failed and were not scored; " +
               std::to_string(r.missing_predictions) + " questions had no prediction and scored 0.\n";
    }
    return out;
}

}  // namespace sqlsynth

#include "sqlsynth/prompts.hpp"

#include <algorithm>
#include <cctype>

namespace sqlsynth {

namespace {

const std::map<std::string, std::string, std::less<>>& registry() {
    static const std::map<std::string, std::string, std::less<>> items{
        {std::string(templates::column_filter), R"(### Role
You map a user question onto the columns of ONE database table. Decide, column by column, whether the column is needed (directly or as part of a computation, filter, join or aggregate) to answer the question.

### Rules
1. Go through every column of the table below. Start a new line per column: its name, what it holds, and whether the question needs it.
2. If a hint is present, every column it mentions must be selected.
3. If the question or hint spells out a formula, select exactly the columns in that formula, even when a similar-looking column exists.
4. A column an aggregate is applied to must be selected.
5. The examples show how columns of this table were used before. Use them as evidence, not as a limit: a column absent from the examples can still be needed.
6. When in doubt, keep the column.
7. If no column is relevant, return an empty list.
8. Write column names exactly as they appear in the table schema.

{TABLE_SCHEMA}

{EXAMPLES}

User Question:
{QUESTION_AND_HINT}

### Answer with one JSON object and nothing else:
{{
    "reasoning": "<one line per column>",
    "selected_columns": ["<column name>", ...]
}}
)"},
        {std::string(templates::sql_generation), R"(*** Write one SQLite query that answers the question below, considering *only* the {DB_ID} database.

### Approach
- Work out what the question asks for and which tables, columns and values of {DB_ID} carry that information.
- Work out how the chosen tables connect and which filters, groupings, aggregates, window functions, orderings and limits the answer needs.
- Produce a single executable SQLite statement that uses only what the question needs.

{AUGMENTATION}

### Question for the {DB_ID} database
{QUESTION}

### Reply format
<reasoning>
Your step-by-step analysis: the intent of the question, the schema items you chose and why, and the clauses the query needs.
</reasoning>
<answer>
The SQLite query.
</answer>
)"},
        {std::string(templates::synth_sql), R"(You write realistic SQLite queries for the {DB_ID} database. Only the tables and columns listed in the sub-schema below exist for this task.

### Sub-schema
{SUB_SCHEMA}

### Task
Difficulty: {LEVEL}
{LEVEL_GUIDE}
Use as many of the listed tables and columns as a sensible question allows. The query must run on SQLite and express an analysis a real user could want.
Request: {VARIANT}

### Reply format
<reasoning>
Briefly, what the query computes.
</reasoning>
<answer>
The SQLite query.
</answer>
)"},
        {std::string(templates::synth_sql_focus), R"(You write realistic SQLite queries for the {DB_ID} database. Only the tables and columns listed in the sub-schema below exist for this task.

### Sub-schema
{SUB_SCHEMA}

### Task
Difficulty: {LEVEL}
{LEVEL_GUIDE}
These columns are rarely used so far; the query must use them: {FOCUS_COLUMNS}
The query must run on SQLite and express an analysis a real user could want.
Request: {VARIANT}

### Reply format
<reasoning>
Briefly, what the query computes.
</reasoning>
<answer>
The SQLite query.
</answer>
)"},
        {std::string(templates::sql_to_text), R"(Translate a SQLite query over the {DB_ID} database into the natural-language question it answers.

### Sub-schema
{SUB_SCHEMA}

### SQL
{SQL}

Write one question a user would ask. Mention the values used in filters, do not mention table or column identifiers literally unless they are ordinary words, and do not describe the SQL mechanics.

### Reply format
<reasoning>
What the query returns.
</reasoning>
<answer>
The question.
</answer>
)"},
        {std::string(templates::judge), R"(Review a question / SQL pair generated for the sub-schema below.

### Sub-schema
{SUB_SCHEMA}

### Question
{QUESTION}

### SQL
{SQL}

The pair is "logical" only if both hold:
1. The SQL answers exactly the question (same filters, grouping, aggregation, ordering and output columns).
2. The analysis makes sense for the data, e.g. it does not average identifiers, sum codes or compare unrelated units.
Otherwise it is "illogical".

### Answer with one JSON object and nothing else:
{{"verdict": "logical" | "illogical", "reason": "<one sentence>"}}
)"},
        {std::string(templates::repair), R"(A SQLite query for the {DB_ID} database failed. Fix it so that it runs and still answers the question.

### Sub-schema
{SUB_SCHEMA}

### Question
{QUESTION}

### Failing SQL
{SQL}

### Error
{ERROR}

### Reply format
<reasoning>
The cause of the error and the fix.
</reasoning>
<answer>
The corrected SQLite query.
</answer>
)"},
        {std::string(templates::reasoning), R"(Explain how to derive the given SQLite query from the question, using a divide-and-conquer plan over the {DB_ID} sub-schema.

### Sub-schema
{SUB_SCHEMA}

### Question
{QUESTION}

### SQL
{SQL}

Split the question into sub-questions, solve each with a partial query, then combine the parts. The final query in <answer> must be exactly the SQL above.

### Reply format
<reasoning>
The numbered steps.
</reasoning>
<answer>
The final SQLite query.
</answer>
)"},
        {std::string(templates::keywords), R"(Extract the keywords of a database question: named entities, literal values, technical terms and the key nouns and phrases a schema search needs. Include keywords from the hint when present.

### Question
{QUESTION}

### Hint
{HINT}

### Answer with one JSON object and nothing else:
{{"keywords": ["<keyword>", ...]}}
)"},
    };
    return items;
}

bool is_name_char(char c) {
    return std::isupper(static_cast<unsigned char>(c)) || std::isdigit(static_cast<unsigned char>(c)) || c == '_';
}

// Length of "{NAME}" starting at text[i], or 0.
std::size_t placeholder_at(std::string_view text, std::size_t i) {
    if (text[i] != '{') return 0;
    std::size_t j = i + 1;
    while (j < text.size() && is_name_char(text[j])) ++j;
    if (j == i + 1 || j >= text.size() || text[j] != '}') return 0;
    return j - i + 1;
}

}  // namespace

std::vector<std::string> template_ids() {
    std::vector<std::string> ids;
    for (const auto& [id, _] : registry()) ids.push_back(id);
    return ids;
}

const std::string& prompt_template(std::string_view id) {
    const auto& r = registry();
    const auto it = r.find(id);
    if (it == r.end()) throw PromptError("unknown template: " + std::string(id));
    return it->second;
}

std::vector<std::string> placeholders(std::string_view text) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text.compare(i, 2, "{{") == 0 || text.compare(i, 2, "}}") == 0) {
            ++i;
            continue;
        }
        if (const auto len = placeholder_at(text, i)) {
            auto name = std::string(text.substr(i + 1, len - 2));
            if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(std::move(name));
            i += len - 1;
        }
    }
    return out;
}

std::string render_template_text(std::string_view text, const Bindings& bindings) {
    std::string out;
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text.compare(i, 2, "{{") == 0) {
            out += '{';
            ++i;
            continue;
        }
        if (text.compare(i, 2, "}}") == 0) {
            out += '}';
            ++i;
            continue;
        }
        if (const auto len = placeholder_at(text, i)) {
            const auto name = text.substr(i + 1, len - 2);
            const auto it = bindings.find(name);
            if (it == bindings.end()) throw PromptError("missing binding for placeholder {" + std::string(name) + "}");
            out += it->second;
            i += len - 1;
            continue;
        }
        out += text[i];
    }
    return out;
}

std::string render_prompt(std::string_view template_id, const Bindings& bindings) {
    return render_template_text(prompt_template(template_id), bindings);
}

}  // namespace sqlsynth

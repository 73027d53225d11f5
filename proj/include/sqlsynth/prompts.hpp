#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sqlsynth {

class PromptError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Bindings = std::map<std::string, std::string, std::less<>>;

// Template ids shipped with the library.
namespace templates {
inline constexpr std::string_view column_filter = "column_filter";
inline constexpr std::string_view sql_generation = "sql_generation";
inline constexpr std::string_view synth_sql = "synth_sql";
inline constexpr std::string_view synth_sql_focus = "synth_sql_focus";
inline constexpr std::string_view sql_to_text = "sql_to_text";
inline constexpr std::string_view judge = "judge";
inline constexpr std::string_view repair = "repair";
inline constexpr std::string_view reasoning = "reasoning";
inline constexpr std::string_view keywords = "keywords";
}  // namespace templates

std::vector<std::string> template_ids();

// Throws PromptError for unknown ids.
const std::string& prompt_template(std::string_view id);

// Placeholder names ({NAME}, NAME in [A-Z0-9_]) in order of first appearance.
std::vector<std::string> placeholders(std::string_view text);

// Literal substitution of {NAME}; "{{" and "}}" emit single braces. Binding
// values are inserted verbatim. A placeholder without a binding is an error.
std::string render_template_text(std::string_view text, const Bindings& bindings);

std::string render_prompt(std::string_view template_id, const Bindings& bindings);

}  // namespace sqlsynth

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "crew/core.hpp"

namespace crew {

namespace fs = std::filesystem;

struct Skill {
    std::string name;
    std::string description;  // one line, <= 200 chars: the index stays compact
    std::string body;
};

struct BehavioralPatch {
    std::string id;
    std::string text;
    std::string provenance;  // episode id that produced it
};

struct TeammateProfile {
    std::string subject;
    std::string text;
    std::string last_updated;  // episode id
};

using CollaborationNote = TeammateProfile;

struct AgentConfig {
    std::string backbone = "scripted-default";
    std::vector<std::string> allowed_tools;
    double temperature = 0.2;
    int max_output_tokens = 32768;
};

struct AgentScaffold {
    std::string name;
    std::string role_prompt;
    std::vector<BehavioralPatch> patches;
    std::vector<Skill> skills;
    std::map<std::string, TeammateProfile> profiles;  // teammate -> profile
    std::map<std::string, CollaborationNote> notes;   // teammate -> pairwise note
    AgentConfig config;

    const Skill* find_skill(const std::string& skill_name) const {
        for (const auto& s : skills)
            if (s.name == skill_name) return &s;
        return nullptr;
    }
};

// The whole team definition as loaded from its directory tree. `files` holds
// the raw bytes of every file in the tree (known and unknown alike), keyed by
// relative path; saving writes exactly this map, so unknown extra files
// survive round trips and untouched files keep their original bytes.
struct TeamScaffold {
    std::vector<AgentScaffold> pool;
    std::string constitution;
    std::string organization;
    std::string entry_agent;
    std::int64_t version = 0;
    std::map<std::string, std::string> files;

    bool has_agent(const std::string& name) const { return find_agent(name) != nullptr; }

    const AgentScaffold* find_agent(const std::string& name) const {
        for (const auto& a : pool)
            if (a.name == name) return &a;
        return nullptr;
    }
    AgentScaffold* find_agent(const std::string& name) {
        for (auto& a : pool)
            if (a.name == name) return &a;
        return nullptr;
    }
    const AgentScaffold& agent(const std::string& name) const {
        if (const auto* a = find_agent(name)) return *a;
        fail(ErrorCode::unknown_agent, "no agent '" + name + "' in pool");
    }
    std::vector<std::string> pool_names() const {
        std::vector<std::string> out;
        out.reserve(pool.size());
        for (const auto& a : pool) out.push_back(a.name);
        return out;
    }
};

// ---------------------------------------------------------------------------
// Evolution update payloads (applied by the store after gate approval).

struct NewAgentSpec {
    std::string name;
    std::string role_prompt;
    AgentConfig config;
};

struct L1Update {
    std::vector<std::string> patches;  // new directives, appended in order
    std::vector<Skill> skills;         // added or replaced by name
    std::string summary;               // u_i, consumed by team-level revision
    std::vector<std::int64_t> flagged_events;
};

struct L2Edit {
    std::string a;
    std::string b;
    std::optional<std::string> profile_a_of_b;
    std::optional<std::string> note_a_of_b;
    std::optional<std::string> profile_b_of_a;
    std::optional<std::string> note_b_of_a;
};

struct L3Update {
    std::optional<std::string> constitution;
    std::optional<std::string> organization;
    std::vector<NewAgentSpec> add_agents;
    std::vector<std::string> remove_agents;
    bool retry_requested = false;
};

struct EvolutionUpdate {
    std::map<std::string, L1Update> l1;
    std::vector<L2Edit> l2;
    L3Update l3;
    std::string episode_id;

    // True when the update would not change any scaffold content. Summaries
    // and the retry flag alone do not count as content.
    bool empty_content() const {
        for (const auto& [_, u] : l1)
            if (!u.patches.empty() || !u.skills.empty()) return false;
        for (const auto& e : l2)
            if (e.profile_a_of_b || e.note_a_of_b || e.profile_b_of_a || e.note_b_of_a)
                return false;
        return !l3.constitution && !l3.organization && l3.add_agents.empty() &&
               l3.remove_agents.empty();
    }
};

struct GateCheck {
    std::string name;  // role_consistency | tool_availability | formatting | budget
    bool pass = true;
    std::string detail;
};

// ---------------------------------------------------------------------------
// File formats

namespace detail {

struct Frontmatter {
    std::map<std::string, std::string> fields;
    std::string body;  // verbatim bytes after the closing delimiter line
};

inline Frontmatter parse_frontmatter(const std::string& content, const std::string& where) {
    if (content.rfind("---\n", 0) != 0)
        fail(ErrorCode::malformed_agent_dir, where + ": missing frontmatter header");
    Frontmatter fm;
    size_t pos = 4;
    while (true) {
        size_t nl = content.find('\n', pos);
        if (nl == std::string::npos)
            fail(ErrorCode::malformed_agent_dir, where + ": unterminated frontmatter");
        std::string line = content.substr(pos, nl - pos);
        pos = nl + 1;
        if (line == "---") break;
        size_t colon = line.find(':');
        if (colon == std::string::npos)
            fail(ErrorCode::malformed_agent_dir, where + ": bad frontmatter line '" + line + "'");
        fm.fields[trim(line.substr(0, colon))] = trim(line.substr(colon + 1));
    }
    fm.body = content.substr(pos);
    return fm;
}

inline std::string emit_frontmatter(const std::vector<std::pair<std::string, std::string>>& fields,
                                    const std::string& body) {
    std::string out = "---\n";
    for (const auto& [k, v] : fields) out += k + ": " + v + "\n";
    out += "---\n";
    out += body;
    return out;
}

inline std::string emit_skill_file(const Skill& s) {
    return emit_frontmatter({{"description", s.description}}, s.body);
}

inline Skill parse_skill_file(const std::string& name, const std::string& content,
                              const std::string& where) {
    auto fm = parse_frontmatter(content, where);
    Skill s;
    s.name = name;
    auto it = fm.fields.find("description");
    if (it == fm.fields.end())
        fail(ErrorCode::malformed_agent_dir, where + ": skill missing description");
    s.description = it->second;
    if (s.description.size() > 200)
        fail(ErrorCode::malformed_agent_dir, where + ": skill description exceeds 200 characters");
    s.body = fm.body;
    if (trim(s.body).empty())
        fail(ErrorCode::malformed_agent_dir, where + ": skill body is empty");
    return s;
}

inline std::string emit_profile_file(const TeammateProfile& p) {
    return emit_frontmatter({{"updated", p.last_updated}}, p.text);
}

inline TeammateProfile parse_profile_file(const std::string& subject, const std::string& content,
                                          const std::string& where) {
    auto fm = parse_frontmatter(content, where);
    TeammateProfile p;
    p.subject = subject;
    auto it = fm.fields.find("updated");
    p.last_updated = it == fm.fields.end() ? "" : it->second;
    p.text = fm.body;
    return p;
}

inline std::string emit_patches_file(const std::vector<BehavioralPatch>& patches) {
    std::string out;
    for (const auto& p : patches) {
        out += "## " + p.id;
        if (!p.provenance.empty()) out += " (episode: " + p.provenance + ")";
        out += "\n\n" + p.text + "\n\n";
    }
    if (out.size() >= 2 && out.compare(out.size() - 2, 2, "\n\n") == 0) out.pop_back();
    return out;
}

inline std::vector<BehavioralPatch> parse_patches_file(const std::string& content,
                                                       const std::string& where) {
    std::vector<BehavioralPatch> patches;
    BehavioralPatch cur;
    std::vector<std::string> body;
    bool in_patch = false;
    auto flush = [&] {
        if (!in_patch) return;
        while (!body.empty() && trim(body.front()).empty()) body.erase(body.begin());
        while (!body.empty() && trim(body.back()).empty()) body.pop_back();
        std::string text;
        for (size_t i = 0; i < body.size(); ++i) text += (i ? "\n" : "") + body[i];
        cur.text = text;
        if (cur.text.empty())
            fail(ErrorCode::malformed_agent_dir, where + ": patch '" + cur.id + "' has empty text");
        patches.push_back(cur);
        body.clear();
    };
    for (const auto& line : split_lines(content)) {
        if (line.rfind("## ", 0) == 0) {
            flush();
            in_patch = true;
            cur = {};
            std::string head = line.substr(3);
            size_t paren = head.find(" (episode: ");
            if (paren != std::string::npos && head.back() == ')') {
                cur.id = trim(head.substr(0, paren));
                cur.provenance = head.substr(paren + 11, head.size() - paren - 12);
            } else {
                cur.id = trim(head);
            }
            if (cur.id.empty())
                fail(ErrorCode::malformed_agent_dir, where + ": patch header without id");
        } else if (in_patch) {
            body.push_back(line);
        } else if (!trim(line).empty()) {
            fail(ErrorCode::malformed_agent_dir, where + ": stray text before first patch header");
        }
    }
    flush();
    std::set<std::string> ids;
    for (const auto& p : patches)
        if (!ids.insert(p.id).second)
            fail(ErrorCode::malformed_agent_dir, where + ": duplicate patch id " + p.id);
    return patches;
}

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

inline std::string emit_block_scalar(const std::string& key, const std::string& text) {
    if (text.empty()) return key + ": \"\"\n";
    std::string out = key + ": |-\n";
    for (const auto& line : split_lines(text)) out += line.empty() ? "\n" : "  " + line + "\n";
    return out;
}

inline std::string emit_team_yaml(const TeamScaffold& team) {
    std::string out;
    out += "version: " + std::to_string(team.version) + "\n";
    out += "entry_agent: " + team.entry_agent + "\n";
    out += emit_block_scalar("organization", team.organization);
    out += "pool:\n";
    for (const auto& a : team.pool) out += "  - " + a.name + "\n";
    return out;
}

inline std::string emit_config_yaml(const AgentConfig& c) {
    std::string out;
    out += "backbone: " + c.backbone + "\n";
    if (c.allowed_tools.empty()) {
        out += "allowed_tools: []\n";
    } else {
        out += "allowed_tools:\n";
        for (const auto& t : c.allowed_tools) out += "  - " + t + "\n";
    }
    out += "temperature: " + format_double(c.temperature) + "\n";
    out += "max_output_tokens: " + std::to_string(c.max_output_tokens) + "\n";
    return out;
}

inline AgentConfig parse_config_yaml(const std::string& content, const std::string& where) {
    YAML::Node doc;
    try {
        doc = YAML::Load(content);
    } catch (const YAML::Exception& e) {
        fail(ErrorCode::malformed_agent_dir, where + ": " + e.what());
    }
    AgentConfig c;
    if (doc["backbone"]) c.backbone = doc["backbone"].as<std::string>();
    if (doc["allowed_tools"])
        for (const auto& n : doc["allowed_tools"]) c.allowed_tools.push_back(n.as<std::string>());
    if (doc["temperature"]) c.temperature = doc["temperature"].as<double>();
    if (doc["max_output_tokens"]) c.max_output_tokens = doc["max_output_tokens"].as<int>();
    if (c.temperature < 0.0 || c.temperature > 2.0)
        fail(ErrorCode::malformed_agent_dir, where + ": temperature outside [0, 2]");
    if (c.max_output_tokens <= 0)
        fail(ErrorCode::malformed_agent_dir, where + ": max_output_tokens must be positive");
    return c;
}

inline std::string agent_dir(const std::string& name) { return "agents/" + name; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Loading

// Faults can be injected at named points of the persistence path; the hook is
// invoked before every file write and around the directory swap.
using FaultHook = std::function<void(const std::string& point)>;
using LogSink = std::function<void(const std::string& line)>;

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) fail(ErrorCode::persist_failure, "cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Parses one agent directory out of a loaded file map.
inline AgentScaffold parse_agent(const std::string& name,
                                 const std::map<std::string, std::string>& files,
                                 const std::vector<std::string>& pool_names) {
    const std::string dir = detail::agent_dir(name) + "/";
    AgentScaffold a;
    a.name = name;

    auto get = [&](const std::string& rel) -> const std::string* {
        auto it = files.find(dir + rel);
        return it == files.end() ? nullptr : &it->second;
    };

    const std::string* prompt = get("prompt.md");
    if (!prompt) fail(ErrorCode::malformed_agent_dir, name + ": missing prompt.md");
    a.role_prompt = *prompt;
    if (trim(a.role_prompt).empty())
        fail(ErrorCode::malformed_agent_dir, name + ": empty prompt.md");

    const std::string* config = get("config.yaml");
    if (!config) fail(ErrorCode::malformed_agent_dir, name + ": missing config.yaml");
    a.config = detail::parse_config_yaml(*config, name + "/config.yaml");

    if (const std::string* patches = get("evolution/patches.md"))
        a.patches = detail::parse_patches_file(*patches, name + "/evolution/patches.md");

    auto in_pool = [&](const std::string& subject) {
        return std::find(pool_names.begin(), pool_names.end(), subject) != pool_names.end();
    };

    for (const auto& [path, content] : files) {
        if (path.rfind(dir, 0) != 0) continue;
        std::string rel = path.substr(dir.size());
        if (rel.rfind("skills/", 0) == 0 && rel.size() > 7) {
            // skills/<name>/SKILL.md
            size_t slash = rel.find('/', 7);
            if (slash == std::string::npos || rel.substr(slash + 1) != "SKILL.md") continue;
            std::string skill_name = rel.substr(7, slash - 7);
            if (!is_filesystem_safe_name(skill_name))
                fail(ErrorCode::malformed_agent_dir, name + ": bad skill name " + skill_name);
            a.skills.push_back(detail::parse_skill_file(skill_name, content, name + "/" + rel));
        } else if (rel.rfind("evolution/profiles/", 0) == 0 && rel.size() > 22 &&
                   rel.compare(rel.size() - 3, 3, ".md") == 0) {
            std::string subject = rel.substr(19, rel.size() - 19 - 3);
            if (subject == name)
                fail(ErrorCode::malformed_agent_dir, name + ": profile references itself");
            if (!in_pool(subject))
                fail(ErrorCode::malformed_agent_dir,
                     name + ": profile subject '" + subject + "' not in pool");
            a.profiles[subject] = detail::parse_profile_file(subject, content, name + "/" + rel);
        } else if (rel.rfind("evolution/notes/", 0) == 0 && rel.size() > 19 &&
                   rel.compare(rel.size() - 3, 3, ".md") == 0) {
            std::string subject = rel.substr(16, rel.size() - 16 - 3);
            if (subject == name)
                fail(ErrorCode::malformed_agent_dir, name + ": note references itself");
            if (!in_pool(subject))
                fail(ErrorCode::malformed_agent_dir,
                     name + ": note subject '" + subject + "' not in pool");
            a.notes[subject] = detail::parse_profile_file(subject, content, name + "/" + rel);
        }
    }
    std::sort(a.skills.begin(), a.skills.end(),
              [](const Skill& x, const Skill& y) { return x.name < y.name; });
    return a;
}

inline TeamScaffold team_from_files(std::map<std::string, std::string> files) {
    TeamScaffold team;
    team.files = std::move(files);

    auto manifest = team.files.find("team.yaml");
    if (manifest == team.files.end())
        fail(ErrorCode::missing_manifest, "team.yaml not found");
    YAML::Node doc;
    try {
        doc = YAML::Load(manifest->second);
    } catch (const YAML::Exception& e) {
        fail(ErrorCode::missing_manifest, std::string("team.yaml unparsable: ") + e.what());
    }
    if (!doc["pool"] || !doc["pool"].IsSequence() || doc["pool"].size() == 0)
        fail(ErrorCode::missing_manifest, "team.yaml has no pool listing");
    team.version = doc["version"] ? doc["version"].as<std::int64_t>() : 0;
    team.entry_agent = doc["entry_agent"] ? doc["entry_agent"].as<std::string>() : "";
    team.organization = doc["organization"] ? doc["organization"].as<std::string>() : "";

    auto constitution = team.files.find("constitution.md");
    if (constitution == team.files.end() || trim(constitution->second).empty())
        fail(ErrorCode::missing_manifest, "constitution.md missing or empty");
    team.constitution = constitution->second;

    std::vector<std::string> names;
    for (const auto& n : doc["pool"]) names.push_back(n.as<std::string>());
    std::set<std::string> seen;
    for (const auto& n : names) {
        if (!is_filesystem_safe_name(n))
            fail(ErrorCode::malformed_agent_dir, "agent name '" + n + "' is not filesystem-safe");
        if (!seen.insert(n).second) fail(ErrorCode::duplicate_agent_name, n);
    }
    if (team.entry_agent.empty()) team.entry_agent = names.front();
    if (!seen.count(team.entry_agent))
        fail(ErrorCode::missing_manifest, "entry_agent '" + team.entry_agent + "' not in pool");

    for (const auto& n : names) team.pool.push_back(parse_agent(n, team.files, names));
    return team;
}

// Loads the team from its directory tree. Recovers from an interrupted
// swap first: a missing root with a .bak sibling means the previous commit
// crashed between renames.
inline TeamScaffold load_team(const fs::path& root) {
    fs::path bak = root.parent_path() / (root.filename().string() + ".bak");
    fs::path tmp = root.parent_path() / (root.filename().string() + ".tmp");
    std::error_code ec;
    if (!fs::exists(root) && fs::exists(bak)) fs::rename(bak, root, ec);
    if (fs::exists(root) && fs::exists(bak)) fs::remove_all(bak, ec);
    if (fs::exists(tmp)) fs::remove_all(tmp, ec);

    if (!fs::is_directory(root))
        fail(ErrorCode::missing_manifest, "team directory " + root.string() + " does not exist");

    std::map<std::string, std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (!entry.is_regular_file()) continue;
        std::string rel = fs::relative(entry.path(), root).generic_string();
        files[rel] = read_file(entry.path());
    }
    return team_from_files(std::move(files));
}

// Writes the team tree atomically: all files go to a temp sibling directory
// which is then swapped in via rename, with .bak kept until the swap
// completes. Any failure leaves the original tree untouched.
inline void save_team(const TeamScaffold& team, const fs::path& root,
                      const FaultHook& fault_hook = nullptr) {
    fs::path parent = root.has_parent_path() ? root.parent_path() : fs::path(".");
    fs::path tmp = parent / (root.filename().string() + ".tmp");
    fs::path bak = parent / (root.filename().string() + ".bak");
    auto hook = [&](const std::string& point) {
        if (fault_hook) fault_hook(point);
    };
    try {
        std::error_code ec;
        fs::remove_all(tmp, ec);
        fs::create_directories(tmp);
        for (const auto& [rel, bytes] : team.files) {
            hook("write:" + rel);
            fs::path p = tmp / rel;
            fs::create_directories(p.parent_path());
            std::ofstream out(p, std::ios::binary | std::ios::trunc);
            if (!out) fail(ErrorCode::persist_failure, "cannot open " + p.string());
            out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
            out.flush();
            if (!out) fail(ErrorCode::persist_failure, "short write to " + p.string());
            hook("wrote:" + rel);
        }
        bool had_old = fs::exists(root);
        hook("swap:backup");
        if (had_old) fs::rename(root, bak);
        hook("swap:install");
        fs::rename(tmp, root);
        hook("swap:cleanup");
        if (had_old) fs::remove_all(bak);
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw Error(ErrorCode::persist_failure, e.what());
    }
}

// ---------------------------------------------------------------------------
// Prompt rendering

inline constexpr const char* kOrchestrationGuide =
    "You are one member of an agent team. Communicate only through tools:\n"
    "- send_message(recipient, body): deliver a message to a teammate's mailbox.\n"
    "- list_pool(): see every pool member with role summary and active status.\n"
    "- start_agent(name, brief): recruit an inactive pool member; the brief\n"
    "  arrives as their first message.\n"
    "- stop_agent(name): wind down an active member after its current step.\n"
    "- load_skill(name): fetch the full body of one of your skills.\n"
    "- finalize(deliverable): submit the team's final deliverable and end the\n"
    "  episode. Exactly one agent should do this, once.\n"
    "- terminate(reason): abort the episode without a deliverable.\n"
    "Reply without any tool call when you are done for now; you will wake when\n"
    "a new message arrives.";

// Fixed assembly order: constitution, role prompt, patches, teammate
// profiles, pairwise notes, skill index, orchestration guide. Profiles and
// notes are shown only for current roster members; skill bodies are never
// included, only names and descriptions.
inline std::string render_system_prompt(const AgentScaffold& agent, const TeamScaffold& team,
                                        const std::vector<std::string>& roster) {
    std::set<std::string> active(roster.begin(), roster.end());
    std::string out;
    out += "# Team Constitution\n\n" + trim(team.constitution) + "\n";
    out += "\n# Your Role: " + agent.name + "\n\n" + trim(agent.role_prompt) + "\n";
    if (!agent.patches.empty()) {
        out += "\n# Behavioral Patches\n\n";
        for (const auto& p : agent.patches) out += "- " + p.text + "\n";
    }
    std::string profiles;
    for (const auto& [subject, p] : agent.profiles)
        if (active.count(subject))
            profiles += "## " + subject + "\n" + trim(p.text) + "\n";
    if (!profiles.empty()) out += "\n# Teammate Profiles\n\n" + profiles;
    std::string notes;
    for (const auto& [subject, n] : agent.notes)
        if (active.count(subject))
            notes += "## " + subject + "\n" + trim(n.text) + "\n";
    if (!notes.empty()) out += "\n# Collaboration Notes\n\n" + notes;
    if (!agent.skills.empty()) {
        out += "\n# Skills\n\nLoad a full skill body with the load_skill tool.\n";
        for (const auto& s : agent.skills) out += "- " + s.name + ": " + s.description + "\n";
    }
    out += "\n# Orchestration\n\n";
    out += kOrchestrationGuide;
    out += "\n";
    return out;
}

inline std::string load_skill(const AgentScaffold& agent, const std::string& skill_name) {
    if (const Skill* s = agent.find_skill(skill_name)) return s->body;
    fail(ErrorCode::unknown_skill, "agent " + agent.name + " has no skill '" + skill_name + "'");
}

// ---------------------------------------------------------------------------
// Update application

struct ApplyOptions {
    int patch_cap = 32;  // oldest patches evicted beyond this, with a log record
    LogSink log;
};

namespace detail {

inline int next_patch_number(const std::vector<BehavioralPatch>& patches) {
    int best = 0;
    for (const auto& p : patches) {
        if (p.id.rfind("p-", 0) == 0) {
            try {
                best = std::max(best, std::stoi(p.id.substr(2)));
            } catch (...) {
            }
        }
    }
    return best + 1;
}

inline std::string patch_id(int n) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "p-%04d", n);
    return buf;
}

inline void refresh_agent_files(TeamScaffold& team, const AgentScaffold& a) {
    const std::string dir = agent_dir(a.name) + "/";
    team.files[dir + "prompt.md"] = a.role_prompt;
    team.files[dir + "config.yaml"] = emit_config_yaml(a.config);
    if (a.patches.empty())
        team.files.erase(dir + "evolution/patches.md");
    else
        team.files[dir + "evolution/patches.md"] = emit_patches_file(a.patches);
    for (const auto& s : a.skills)
        team.files[dir + "skills/" + s.name + "/SKILL.md"] = emit_skill_file(s);
    for (const auto& [subject, p] : a.profiles)
        team.files[dir + "evolution/profiles/" + subject + ".md"] = emit_profile_file(p);
    for (const auto& [subject, n] : a.notes)
        team.files[dir + "evolution/notes/" + subject + ".md"] = emit_profile_file(n);
}

inline std::string default_role_prompt(const std::string& name) {
    return "# Role: " + name +
           "\n\nYou are a newly introduced team member. Follow the team constitution, "
           "handle requests sent to your mailbox, and report results to the agent that "
           "briefed you.\n";
}

}  // namespace detail

// Pure transform: applies an evolution update to a copy of the team and
// returns it with version + 1 and the affected file entries regenerated.
// Callers are expected to have run the commit gate first; only cheap
// structural constraints are re-validated here.
inline TeamScaffold apply_update_in_memory(const TeamScaffold& team, const EvolutionUpdate& update,
                                           const ApplyOptions& opts = {}) {
    TeamScaffold next = team;
    auto log = [&](const std::string& line) {
        if (opts.log) opts.log(line);
    };

    // L3 roster removals first: team-level authority wins over same-episode
    // agent edits.
    for (const auto& name : update.l3.remove_agents) {
        auto it = std::find_if(next.pool.begin(), next.pool.end(),
                               [&](const AgentScaffold& a) { return a.name == name; });
        if (it == next.pool.end()) fail(ErrorCode::unknown_agent, "cannot remove '" + name + "'");
        if (name == next.entry_agent)
            fail(ErrorCode::invalid_argument, "cannot remove the entry agent '" + name + "'");
        // Archive the agent directory under retired/ instead of deleting it.
        const std::string from = detail::agent_dir(name) + "/";
        const std::string to = "retired/" + name + "/";
        std::map<std::string, std::string> moved;
        for (auto f = next.files.begin(); f != next.files.end();) {
            if (f->first.rfind(from, 0) == 0) {
                moved[to + f->first.substr(from.size())] = std::move(f->second);
                f = next.files.erase(f);
            } else {
                ++f;
            }
        }
        next.files.insert(moved.begin(), moved.end());
        next.pool.erase(it);
        // Prune other agents' references so profile/note subjects stay valid.
        for (auto& other : next.pool) {
            other.profiles.erase(name);
            other.notes.erase(name);
            next.files.erase(detail::agent_dir(other.name) + "/evolution/profiles/" + name + ".md");
            next.files.erase(detail::agent_dir(other.name) + "/evolution/notes/" + name + ".md");
        }
        log("retired agent " + name);
    }

    for (const auto& spec : update.l3.add_agents) {
        if (!is_filesystem_safe_name(spec.name))
            fail(ErrorCode::invalid_argument, "new agent name '" + spec.name + "' unsafe");
        if (next.has_agent(spec.name)) fail(ErrorCode::duplicate_agent_name, spec.name);
        AgentScaffold a;
        a.name = spec.name;
        a.role_prompt =
            spec.role_prompt.empty() ? detail::default_role_prompt(spec.name) : spec.role_prompt;
        a.config = spec.config;
        next.pool.push_back(a);
        detail::refresh_agent_files(next, next.pool.back());
        log("added agent " + spec.name);
    }

    for (const auto& [name, l1] : update.l1) {
        AgentScaffold* a = next.find_agent(name);
        if (!a) {
            // Removed in the same episode; team-level decision wins.
            log("dropped L1 update for retired agent " + name);
            continue;
        }
        int n = detail::next_patch_number(a->patches);
        for (const auto& text : l1.patches)
            a->patches.push_back({detail::patch_id(n++), text, update.episode_id});
        while (static_cast<int>(a->patches.size()) > opts.patch_cap) {
            log("evicted patch " + a->patches.front().id + " from " + name + " (cap " +
                std::to_string(opts.patch_cap) + ")");
            a->patches.erase(a->patches.begin());
        }
        for (const auto& s : l1.skills) {
            auto it = std::find_if(a->skills.begin(), a->skills.end(),
                                   [&](const Skill& k) { return k.name == s.name; });
            if (it == a->skills.end())
                a->skills.push_back(s);
            else
                *it = s;
        }
        std::sort(a->skills.begin(), a->skills.end(),
                  [](const Skill& x, const Skill& y) { return x.name < y.name; });
        detail::refresh_agent_files(next, *a);
    }

    auto set_profile = [&](const std::string& owner, const std::string& subject,
                           const std::optional<std::string>& text, bool is_note) {
        if (!text) return;
        AgentScaffold* a = next.find_agent(owner);
        if (!a) return;  // owner retired this episode
        if (!next.has_agent(subject) || subject == owner)
            fail(ErrorCode::unknown_agent,
                 "profile/note subject '" + subject + "' invalid for " + owner);
        auto& slot = is_note ? a->notes[subject] : a->profiles[subject];
        slot = {subject, *text, update.episode_id};
        detail::refresh_agent_files(next, *a);
    };
    for (const auto& e : update.l2) {
        set_profile(e.a, e.b, e.profile_a_of_b, false);
        set_profile(e.a, e.b, e.note_a_of_b, true);
        set_profile(e.b, e.a, e.profile_b_of_a, false);
        set_profile(e.b, e.a, e.note_b_of_a, true);
    }

    if (update.l3.constitution) {
        next.constitution = *update.l3.constitution;
        next.files["constitution.md"] = next.constitution;
    }
    if (update.l3.organization) next.organization = *update.l3.organization;

    next.version = team.version + 1;
    next.files["team.yaml"] = detail::emit_team_yaml(next);
    return next;
}

// Owns a team directory: serializes commits, injects faults for testing, and
// guarantees episodes always read a consistent snapshot.
class ScaffoldStore {
public:
    explicit ScaffoldStore(fs::path root) : root_(std::move(root)) {}

    const fs::path& root() const { return root_; }

    TeamScaffold load() const { return load_team(root_); }

    // Creates the directory tree for a team built in memory (version kept).
    void initialize(TeamScaffold& team) {
        std::lock_guard lk(commit_mu_);
        team.files.clear();
        team.files["team.yaml"] = detail::emit_team_yaml(team);
        team.files["constitution.md"] = team.constitution;
        for (const auto& a : team.pool) detail::refresh_agent_files(team, a);
        save_team(team, root_, fault_hook);
    }

    // apply + persist; exactly one committer at a time.
    TeamScaffold apply_update(const TeamScaffold& team, const EvolutionUpdate& update) {
        std::lock_guard lk(commit_mu_);
        ApplyOptions opts;
        opts.patch_cap = patch_cap;
        opts.log = log;
        TeamScaffold next = apply_update_in_memory(team, update, opts);
        save_team(next, root_, fault_hook);
        return next;
    }

    int patch_cap = 32;
    LogSink log;
    FaultHook fault_hook;

private:
    fs::path root_;
    std::mutex commit_mu_;
};

}  // namespace crew

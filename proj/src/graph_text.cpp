#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cprl/causal_graph.hpp"

// Graph-spec text format. Line oriented; '#' starts a comment. One `node`
// line per node, one `slot` line per [MASK] slot, one `knowledge ... end`
// block per mechanism arrow. Coefficients reference `slot:<name-or-index>`
// or `const:<value>`. The serializer emits a canonical byte-stable form.

namespace cprl {

namespace {

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream in(line);
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

double parse_number(const std::string& tok, int line) {
    try {
        std::size_t used = 0;
        const double v = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw GraphParseError(line, "expected a number, got '" + tok + "'");
    }
}

int parse_int(const std::string& tok, int line) {
    int v = 0;
    const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size()) {
        throw GraphParseError(line, "expected an integer, got '" + tok + "'");
    }
    return v;
}

int resolve_slot(const CausalGraph& g, const std::string& ref, int line) {
    if (!ref.empty() && std::isdigit(static_cast<unsigned char>(ref[0]))) {
        const int k = parse_int(ref, line);
        if (k < 0 || k >= g.param_slot_count()) {
            throw GraphParseError(line, "undeclared parameter slot index " + std::to_string(k) +
                                            " (graph has " + std::to_string(g.param_slot_count()) +
                                            " slots)");
        }
        return k;
    }
    const int k = g.slot_index(ref);
    if (k < 0) throw GraphParseError(line, "undeclared parameter slot '" + ref + "'");
    return k;
}

int resolve_node(const CausalGraph& g, const std::string& id, int line) {
    const int v = g.node_index(id);
    if (v < 0) throw GraphParseError(line, "undeclared node '" + id + "'");
    return v;
}

int resolve_channel(const CausalGraph& g, const std::string& name, int line) {
    const int c = g.channel_index(name);
    if (c < 0) throw GraphParseError(line, "undeclared channel '" + name + "'");
    return c;
}

// coeff := slot:<ref> | const:<value>
void parse_coeff(const CausalGraph& g, const std::string& tok, int line, bool& is_slot,
                 int& slot, double& constant) {
    if (tok.rfind("slot:", 0) == 0) {
        is_slot = true;
        slot = resolve_slot(g, tok.substr(5), line);
        constant = 0.0;
    } else if (tok.rfind("const:", 0) == 0) {
        is_slot = false;
        slot = -1;
        constant = parse_number(tok.substr(6), line);
    } else {
        throw GraphParseError(line, "expected slot:<ref> or const:<value>, got '" + tok + "'");
    }
}

std::string key_value(const std::string& tok, const std::string& key, int line) {
    if (tok.rfind(key + "=", 0) != 0) {
        throw GraphParseError(line, "expected " + key + "=..., got '" + tok + "'");
    }
    return tok.substr(key.size() + 1);
}

std::string format_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string coeff_text(const CausalGraph& g, bool is_slot, int slot, double constant) {
    if (is_slot) return "slot:" + g.slots[slot].name;
    return "const:" + format_number(constant);
}

}  // namespace

CausalGraph parse_graph_spec(const std::string& text) {
    CausalGraph g;
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    bool in_knowledge = false;
    CausalKnowledge current;
    int current_line = 0;

    while (std::getline(in, raw)) {
        ++line;
        const auto hash = raw.find('#');
        if (hash != std::string::npos) raw.erase(hash);
        const auto toks = split_ws(raw);
        if (toks.empty()) continue;
        const std::string& head = toks[0];

        if (in_knowledge) {
            if (head == "term") {
                if (toks.size() != 4) {
                    throw GraphParseError(line, "term expects: term <scale> <coeff> <source>");
                }
                KnowledgeTerm t;
                t.scale = parse_number(toks[1], line);
                parse_coeff(g, toks[2], line, t.is_slot, t.slot, t.constant);
                t.source = resolve_node(g, toks[3], line);
                current.terms.push_back(t);
            } else if (head == "input") {
                if (toks.size() < 3 || toks.size() > 4) {
                    throw GraphParseError(line,
                                          "input expects: input <channel> gain=<coeff> [scale=<s>]");
                }
                InputTerm it;
                it.channel = resolve_channel(g, toks[1], line);
                parse_coeff(g, key_value(toks[2], "gain", line), line, it.is_slot, it.slot,
                            it.constant);
                if (toks.size() == 4) it.scale = parse_number(key_value(toks[3], "scale", line), line);
                if (current.input) throw GraphParseError(line, "duplicate input in knowledge block");
                current.input = it;
            } else if (head == "end") {
                if (current.terms.empty() && !current.input) {
                    throw GraphParseError(current_line, "knowledge entry '" + current.label +
                                                            "' has no terms and no input");
                }
                g.knowledge.push_back(std::move(current));
                current = CausalKnowledge{};
                in_knowledge = false;
            } else {
                throw GraphParseError(line, "unexpected token '" + head + "' inside knowledge block");
            }
            continue;
        }

        if (head == "graph") {
            if (toks.size() != 2) throw GraphParseError(line, "graph expects a single name");
            g.name = toks[1];
        } else if (head == "radius") {
            if (toks.size() != 2) throw GraphParseError(line, "radius expects one integer");
            g.radius_r = parse_int(toks[1], line);
            if (g.radius_r < 1) throw GraphParseError(line, "radius must be positive");
        } else if (head == "bound") {
            if (toks.size() != 2) throw GraphParseError(line, "bound expects one integer");
            g.bound_b = parse_int(toks[1], line);
            if (g.bound_b < 1) throw GraphParseError(line, "bound must be positive");
        } else if (head == "channel") {
            if (toks.size() != 2) throw GraphParseError(line, "channel expects a single name");
            if (g.channel_index(toks[1]) >= 0) {
                throw GraphParseError(line, "duplicate channel '" + toks[1] + "'");
            }
            g.channels.push_back(toks[1]);
        } else if (head == "node") {
            if (toks.size() < 3) {
                throw GraphParseError(line, "node expects: node <id> unit=<u> observed|latent "
                                            "[hold=<channel>]");
            }
            NodeDecl node;
            node.id = toks[1];
            if (g.node_index(node.id) >= 0) {
                throw GraphParseError(line, "duplicate node id '" + node.id + "'");
            }
            node.unit = key_value(toks[2], "unit", line);
            if (toks.size() < 4 || (toks[3] != "observed" && toks[3] != "latent")) {
                throw GraphParseError(line, "node '" + node.id + "' must say observed or latent");
            }
            node.observed = toks[3] == "observed";
            if (toks.size() == 5) {
                const std::string ch = key_value(toks[4], "hold", line);
                resolve_channel(g, ch, line);
                node.hold_channel = ch;
            } else if (toks.size() > 5) {
                throw GraphParseError(line, "trailing tokens after node declaration");
            }
            g.nodes.push_back(std::move(node));
        } else if (head == "slot") {
            if (toks.size() != 3) throw GraphParseError(line, "slot expects: slot <name> base=<v>");
            SlotDecl slot;
            slot.name = toks[1];
            if (g.slot_index(slot.name) >= 0) {
                throw GraphParseError(line, "duplicate slot '" + slot.name + "'");
            }
            slot.base = parse_number(key_value(toks[2], "base", line), line);
            g.slots.push_back(std::move(slot));
        } else if (head == "knowledge") {
            if (toks.size() != 3) {
                throw GraphParseError(line, "knowledge expects: knowledge <label> target=<node>");
            }
            current = CausalKnowledge{};
            current.label = toks[1];
            current.target = resolve_node(g, key_value(toks[2], "target", line), line);
            current_line = line;
            in_knowledge = true;
        } else {
            throw GraphParseError(line, "unknown directive '" + head + "'");
        }
    }
    if (in_knowledge) {
        throw GraphParseError(current_line, "knowledge block '" + current.label + "' missing end");
    }
    if (g.name.empty()) throw GraphParseError(1, "missing graph name");
    return g;
}

CausalGraph load_graph_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open graph spec: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_graph_spec(buf.str());
}

std::string serialize_graph(const CausalGraph& g) {
    std::ostringstream out;
    out << "graph " << g.name << "\n";
    out << "radius " << g.radius_r << "\n";
    out << "bound " << g.bound_b << "\n";
    for (const auto& c : g.channels) out << "channel " << c << "\n";
    for (const auto& n : g.nodes) {
        out << "node " << n.id << " unit=" << n.unit << (n.observed ? " observed" : " latent");
        if (n.is_hold()) out << " hold=" << n.hold_channel;
        out << "\n";
    }
    for (const auto& s : g.slots) {
        out << "slot " << s.name << " base=" << format_number(s.base) << "\n";
    }
    for (const auto& k : g.knowledge) {
        out << "knowledge " << k.label << " target=" << g.nodes[k.target].id << "\n";
        for (const auto& t : k.terms) {
            out << "  term " << format_number(t.scale) << " "
                << coeff_text(g, t.is_slot, t.slot, t.constant) << " " << g.nodes[t.source].id
                << "\n";
        }
        if (k.input) {
            const auto& it = *k.input;
            out << "  input " << g.channels[it.channel] << " gain="
                << coeff_text(g, it.is_slot, it.slot, it.constant);
            if (it.scale != 1.0) out << " scale=" << format_number(it.scale);
            out << "\n";
        }
        out << "end\n";
    }
    return out.str();
}

void save_graph_file(const CausalGraph& graph, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write graph spec: " + path);
    out << serialize_graph(graph);
}

std::uint64_t graph_hash(const CausalGraph& graph) {
    const std::string bytes = serialize_graph(graph);
    std::uint64_t h = 1469598103934665603ull;
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace cprl

#include "dsse/grid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace dsse::grid {

namespace {

// Dense LU solve with partial pivoting; the Jacobians here are small.
void lu_solve(std::vector<double>& a, std::vector<double>& rhs, int n) {
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    for (int col = 0; col < n; ++col) {
        int pivot = col;
        double best = std::abs(a[perm[col] * n + col]);
        for (int r = col + 1; r < n; ++r) {
            const double cand = std::abs(a[perm[r] * n + col]);
            if (cand > best) {
                best = cand;
                pivot = r;
            }
        }
        if (best < 1e-14) throw NumericError("power flow: singular Jacobian");
        std::swap(perm[col], perm[pivot]);
        const int prow = perm[col];
        const double diag = a[prow * n + col];
        for (int r = col + 1; r < n; ++r) {
            const int row = perm[r];
            const double f = a[row * n + col] / diag;
            if (f == 0.0) continue;
            a[row * n + col] = f;
            for (int c = col + 1; c < n; ++c) a[row * n + c] -= f * a[prow * n + c];
            rhs[row] -= f * rhs[prow];
        }
    }
    std::vector<double> x(n);
    for (int i = n - 1; i >= 0; --i) {
        double acc = rhs[perm[i]];
        for (int c = i + 1; c < n; ++c) acc -= a[perm[i] * n + c] * x[c];
        x[i] = acc / a[perm[i] * n + i];
    }
    rhs = std::move(x);
}

const char* kind_name(MeasurementKind k) {
    switch (k) {
        case MeasurementKind::P_flow: return "Pflow";
        case MeasurementKind::Q_flow: return "Qflow";
        case MeasurementKind::P_inj: return "Pinj";
        case MeasurementKind::Q_inj: return "Qinj";
    }
    throw ValueError("unknown measurement kind");
}

}  // namespace

// ---------------------------------------------------------------- Network

void Network::validate() const {
    if (bus_count < 1) throw ValueError("network: bus_count must be >= 1");
    if (slack_bus < 0 || slack_bus >= bus_count) throw ValueError("network: slack bus out of range");
    for (const Line& l : lines) {
        if (l.from == l.to) throw ValueError("network: self-loop on bus " + std::to_string(l.from));
        if (l.from < 0 || l.from >= bus_count || l.to < 0 || l.to >= bus_count)
            throw ValueError("network: line endpoint out of range");
        if (!std::isfinite(l.g) || !std::isfinite(l.b))
            throw ValueError("network: non-finite line admittance");
    }
    // connectivity via BFS from the slack
    std::vector<char> seen(bus_count, 0);
    std::vector<int> queue = {slack_bus};
    seen[slack_bus] = 1;
    const auto adj = adjacency();
    while (!queue.empty()) {
        const int bus = queue.back();
        queue.pop_back();
        for (int li : adj[bus]) {
            const int other = lines[li].from == bus ? lines[li].to : lines[li].from;
            if (!seen[other]) {
                seen[other] = 1;
                queue.push_back(other);
            }
        }
    }
    for (int i = 0; i < bus_count; ++i)
        if (!seen[i]) throw ValueError("network: bus " + std::to_string(i) + " is disconnected");
}

std::vector<std::vector<int>> Network::adjacency() const {
    std::vector<std::vector<int>> adj(bus_count);
    for (std::size_t li = 0; li < lines.size(); ++li) {
        adj[lines[li].from].push_back(static_cast<int>(li));
        adj[lines[li].to].push_back(static_cast<int>(li));
    }
    return adj;
}

Network Network::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("network: cannot open " + path);
    Network net;
    std::string token;
    std::string line;
    bool have_buses = false;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        ss >> token;
        if (token == "buses") {
            ss >> net.bus_count;
            have_buses = true;
        } else if (token == "slack") {
            ss >> net.slack_bus;
        } else if (token == "line") {
            Line l;
            ss >> l.from >> l.to >> l.g >> l.b;
            if (!ss) throw IoError("network: malformed line entry: " + line);
            net.lines.push_back(l);
        } else {
            throw IoError("network: unknown directive '" + token + "'");
        }
    }
    if (!have_buses) throw IoError("network: missing 'buses' directive in " + path);
    net.validate();
    return net;
}

void Network::to_file(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("network: cannot write " + path);
    os << "# feeder network, per-unit line admittances\n";
    os << "buses " << bus_count << "\n";
    os << "slack " << slack_bus << "\n";
    char buf[128];
    for (const Line& l : lines) {
        std::snprintf(buf, sizeof(buf), "line %d %d %.17g %.17g\n", l.from, l.to, l.g, l.b);
        os << buf;
    }
}

StateVector StateVector::flat(int bus_count, double magnitude) {
    StateVector x;
    x.v.assign(bus_count, magnitude);
    x.theta.assign(bus_count, 0.0);
    return x;
}

// ------------------------------------------------------------- descriptors

std::string MeasurementDescriptor::id() const {
    if (kind == MeasurementKind::P_inj || kind == MeasurementKind::Q_inj)
        return std::string(kind_name(kind)) + "_" + std::to_string(bus);
    return std::string(kind_name(kind)) + "_" + std::to_string(from_bus) + "_" +
           std::to_string(to_bus);
}

MeasurementDescriptor MeasurementDescriptor::parse(const std::string& id) {
    MeasurementDescriptor d;
    std::string rest;
    auto starts = [&](const char* prefix) {
        const std::size_t n = std::string(prefix).size();
        if (id.rfind(prefix, 0) == 0) {
            rest = id.substr(n);
            return true;
        }
        return false;
    };
    if (starts("Pinj_")) d.kind = MeasurementKind::P_inj;
    else if (starts("Qinj_")) d.kind = MeasurementKind::Q_inj;
    else if (starts("Pflow_")) d.kind = MeasurementKind::P_flow;
    else if (starts("Qflow_")) d.kind = MeasurementKind::Q_flow;
    else throw ValueError("descriptor: cannot parse id '" + id + "'");

    try {
        if (d.kind == MeasurementKind::P_inj || d.kind == MeasurementKind::Q_inj) {
            d.bus = std::stoi(rest);
        } else {
            const std::size_t us = rest.find('_');
            if (us == std::string::npos) throw ValueError("");
            d.from_bus = std::stoi(rest.substr(0, us));
            d.to_bus = std::stoi(rest.substr(us + 1));
        }
    } catch (const std::exception&) {
        throw ValueError("descriptor: cannot parse id '" + id + "'");
    }
    return d;
}

bool MeasurementFrame::complete() const {
    return std::all_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; });
}

MeasurementFrame MeasurementFrame::observed(std::vector<double> values) {
    MeasurementFrame f;
    f.mask.assign(values.size(), 1);
    f.values = std::move(values);
    return f;
}

InjectionSpec InjectionSpec::zeros(int bus_count) {
    InjectionSpec s;
    s.p.assign(bus_count, 0.0);
    s.q.assign(bus_count, 0.0);
    return s;
}

// ------------------------------------------------------------------ physics

std::pair<double, double> line_flow(const Network& net, const StateVector& x, int from, int to) {
    const Line* found = nullptr;
    for (const Line& l : net.lines) {
        if ((l.from == from && l.to == to) || (l.from == to && l.to == from)) {
            found = &l;
            break;
        }
    }
    if (!found)
        throw ValueError("line_flow: no line between buses " + std::to_string(from) + " and " +
                         std::to_string(to));
    const double g = found->g, b = found->b;
    const double vi = x.v[from], vj = x.v[to];
    const double delta = x.theta[from] - x.theta[to];
    const double p = vi * vi * g - vi * vj * (g * std::cos(delta) + b * std::sin(delta));
    const double q = -vi * vi * b - vi * vj * (g * std::sin(delta) - b * std::cos(delta));
    return {p, q};
}

void bus_injections(const Network& net, const StateVector& x, std::vector<double>& p_out,
                    std::vector<double>& q_out, InjectionConvention convention) {
    p_out.assign(net.bus_count, 0.0);
    q_out.assign(net.bus_count, 0.0);
    for (const Line& l : net.lines) {
        const auto [pf, qf] = line_flow(net, x, l.from, l.to);
        const auto [pr, qr] = line_flow(net, x, l.to, l.from);
        if (convention == InjectionConvention::net_flow_sum) {
            p_out[l.from] += pf;
            q_out[l.from] += qf;
            p_out[l.to] += pr;
            q_out[l.to] += qr;
        } else {
            // difference form: at bus i, each incident line contributes P_ji - P_ij
            p_out[l.from] += pr - pf;
            q_out[l.from] += qr - qf;
            p_out[l.to] += pf - pr;
            q_out[l.to] += qf - qr;
        }
    }
}

MeasurementFrame measurement_function(const Network& net, const StateVector& x,
                                      const std::vector<MeasurementDescriptor>& descriptors,
                                      InjectionConvention convention) {
    std::vector<double> p_inj, q_inj;
    bool have_inj = false;
    std::vector<double> values;
    values.reserve(descriptors.size());
    for (const MeasurementDescriptor& d : descriptors) {
        switch (d.kind) {
            case MeasurementKind::P_inj:
            case MeasurementKind::Q_inj:
                if (!have_inj) {
                    bus_injections(net, x, p_inj, q_inj, convention);
                    have_inj = true;
                }
                if (d.bus < 0 || d.bus >= net.bus_count)
                    throw ValueError("measurement_function: bad bus in descriptor " + d.id());
                values.push_back(d.kind == MeasurementKind::P_inj ? p_inj[d.bus] : q_inj[d.bus]);
                break;
            case MeasurementKind::P_flow:
            case MeasurementKind::Q_flow: {
                const auto [p, q] = line_flow(net, x, d.from_bus, d.to_bus);
                values.push_back(d.kind == MeasurementKind::P_flow ? p : q);
                break;
            }
        }
    }
    return MeasurementFrame::observed(std::move(values));
}

// --------------------------------------------------------------- power flow

PowerFlowResult solve_power_flow(const Network& net, const InjectionSpec& specified,
                                 double slack_voltage, double tolerance, int max_iterations) {
    net.validate();
    if (slack_voltage <= 0.0) throw ValueError("power flow: slack voltage must be positive");
    if (static_cast<int>(specified.p.size()) != net.bus_count ||
        static_cast<int>(specified.q.size()) != net.bus_count)
        throw ShapeError("power flow: injection spec length mismatch");

    const int n = net.bus_count;
    const int slack = net.slack_bus;
    const auto adj = net.adjacency();

    StateVector x = StateVector::flat(n, slack_voltage);

    // unknown ordering: angles of non-slack buses, then magnitudes
    std::vector<int> bus_of;  // unknown index -> bus
    bus_of.reserve(n - 1);
    std::vector<int> pos(n, -1);
    for (int b = 0; b < n; ++b)
        if (b != slack) {
            pos[b] = static_cast<int>(bus_of.size());
            bus_of.push_back(b);
        }
    const int nu = static_cast<int>(bus_of.size());
    const int dim = 2 * nu;

    PowerFlowResult result;
    if (dim == 0) {
        result.state = x;
        return result;
    }

    std::vector<double> p_calc, q_calc, jac, rhs;
    for (int iter = 0; iter <= max_iterations; ++iter) {
        bus_injections(net, x, p_calc, q_calc, InjectionConvention::net_flow_sum);
        double max_mis = 0.0;
        rhs.assign(dim, 0.0);
        for (int u = 0; u < nu; ++u) {
            const int bus = bus_of[u];
            rhs[u] = -(p_calc[bus] - specified.p[bus]);
            rhs[nu + u] = -(q_calc[bus] - specified.q[bus]);
            max_mis = std::max({max_mis, std::abs(rhs[u]), std::abs(rhs[nu + u])});
        }
        result.mismatch_history.push_back(max_mis);
        result.max_mismatch = max_mis;
        result.iterations = iter;
        if (max_mis < tolerance) {
            result.state = x;
            return result;
        }
        if (iter == max_iterations) break;

        // analytic Jacobian of the net-flow injections
        jac.assign(static_cast<std::size_t>(dim) * dim, 0.0);
        auto J = [&](int r, int c) -> double& { return jac[static_cast<std::size_t>(r) * dim + c]; };
        for (int u = 0; u < nu; ++u) {
            const int i = bus_of[u];
            const double vi = x.v[i];
            for (int li : adj[i]) {
                const Line& l = net.lines[li];
                const int j = l.from == i ? l.to : l.from;
                const double g = l.g, b = l.b;
                const double vj = x.v[j];
                const double delta = x.theta[i] - x.theta[j];
                const double cd = std::cos(delta), sd = std::sin(delta);

                const double dp_dti = vi * vj * (g * sd - b * cd);
                const double dp_dvi = 2.0 * vi * g - vj * (g * cd + b * sd);
                const double dp_dvj = -vi * (g * cd + b * sd);
                const double dq_dti = -vi * vj * (g * cd + b * sd);
                const double dq_dvi = -2.0 * vi * b - vj * (g * sd - b * cd);
                const double dq_dvj = -vi * (g * sd - b * cd);

                J(u, u) += dp_dti;
                J(u, nu + u) += dp_dvi;
                J(nu + u, u) += dq_dti;
                J(nu + u, nu + u) += dq_dvi;
                if (j != slack) {
                    const int w = pos[j];
                    J(u, w) += -dp_dti;  // d/dtheta_j = -d/dtheta_i for this line term
                    J(u, nu + w) += dp_dvj;
                    J(nu + u, w) += -dq_dti;
                    J(nu + u, nu + w) += dq_dvj;
                }
            }
        }
        lu_solve(jac, rhs, dim);
        for (int u = 0; u < nu; ++u) {
            x.theta[bus_of[u]] += rhs[u];
            x.v[bus_of[u]] += rhs[nu + u];
            if (x.v[bus_of[u]] <= 0.0)
                throw ConvergenceError("power flow: voltage collapsed below zero", result.max_mismatch);
        }
    }
    throw ConvergenceError("power flow: no convergence after " + std::to_string(max_iterations) +
                               " iterations, mismatch " + std::to_string(result.max_mismatch),
                           result.max_mismatch);
}

// ----------------------------------------------------------------- builders

Network generate_feeder(int bus_count, std::uint64_t seed, ImpedanceRanges ranges) {
    if (bus_count < 2) throw ValueError("generate_feeder: need at least 2 buses");
    if (ranges.r_min <= 0 || ranges.r_max < ranges.r_min || ranges.x_min <= 0 ||
        ranges.x_max < ranges.x_min)
        throw ValueError("generate_feeder: invalid impedance ranges");
    RandomSource rng = RandomSource(seed).fork(0x6665656465720001ull);
    Network net;
    net.bus_count = bus_count;
    net.slack_bus = 0;
    net.lines.reserve(bus_count - 1);
    for (int b = 1; b < bus_count; ++b) {
        // feeders are chain-heavy: extend the most recent bus half the time
        const int parent = (b == 1 || rng.uniform01() < 0.5) ? b - 1 : rng.uniform_int(0, b - 1);
        const double r = rng.uniform(ranges.r_min, ranges.r_max);
        const double xr = rng.uniform(ranges.x_min, ranges.x_max);
        const double denom = r * r + xr * xr;
        net.lines.push_back(Line{parent, b, r / denom, -xr / denom});
    }
    net.validate();
    return net;
}

std::vector<MeasurementDescriptor> place_sensors(const Network& net, double fraction,
                                                 std::uint64_t seed) {
    if (fraction <= 0.0 || fraction > 1.0)
        throw ValueError("place_sensors: fraction must be in (0, 1]");
    const int count = static_cast<int>(fraction * net.bus_count);
    if (count == 0) throw ValueError("place_sensors: fraction selects zero buses");
    RandomSource rng = RandomSource(seed).fork(0x73656e736f720001ull);
    auto chosen = rng.sample_indices(net.bus_count, count);
    std::sort(chosen.begin(), chosen.end());
    std::vector<char> selected(net.bus_count, 0);
    for (std::size_t b : chosen) selected[b] = 1;

    std::vector<MeasurementDescriptor> out;
    for (std::size_t b : chosen) {
        out.push_back({MeasurementKind::P_inj, static_cast<int>(b), -1, -1});
        out.push_back({MeasurementKind::Q_inj, static_cast<int>(b), -1, -1});
    }
    for (const Line& l : net.lines) {
        if (selected[l.from]) {
            out.push_back({MeasurementKind::P_flow, -1, l.from, l.to});
            out.push_back({MeasurementKind::Q_flow, -1, l.from, l.to});
        }
        if (selected[l.to]) {
            out.push_back({MeasurementKind::P_flow, -1, l.to, l.from});
            out.push_back({MeasurementKind::Q_flow, -1, l.to, l.from});
        }
    }
    return out;
}

std::vector<MeasurementDescriptor> descriptors_from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("descriptors: cannot open " + path);
    std::vector<MeasurementDescriptor> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        out.push_back(MeasurementDescriptor::parse(line));
    }
    return out;
}

void descriptors_to_file(const std::vector<MeasurementDescriptor>& descriptors,
                         const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("descriptors: cannot write " + path);
    for (const MeasurementDescriptor& d : descriptors) os << d.id() << "\n";
}

}  // namespace dsse::grid

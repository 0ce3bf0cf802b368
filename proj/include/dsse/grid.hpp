#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dsse/error.hpp"
#include "dsse/random.hpp"

namespace dsse::grid {

// Per-unit series admittance of one branch: g + jb with b typically negative.
struct Line {
    int from = 0;
    int to = 0;
    double g = 0.0;
    double b = 0.0;
};

// Radial (or meshed) feeder topology. Exactly one slack bus, connected graph,
// no self-loops, finite per-unit admittances.
struct Network {
    int bus_count = 0;
    int slack_bus = 0;
    std::vector<Line> lines;

    void validate() const;

    // adjacency()[bus] lists indices into `lines` of the incident branches.
    std::vector<std::vector<int>> adjacency() const;

    static Network from_file(const std::string& path);
    void to_file(const std::string& path) const;
};

// Voltage magnitude (pu) and angle (radians) per bus; the slack angle is 0.
struct StateVector {
    std::vector<double> v;
    std::vector<double> theta;

    std::size_t size() const { return v.size(); }
    static StateVector flat(int bus_count, double magnitude = 1.0);
};

enum class MeasurementKind { P_flow, Q_flow, P_inj, Q_inj };

// Injections carry the bus id; flows carry a directed bus pair that must match
// a network line in either orientation.
struct MeasurementDescriptor {
    MeasurementKind kind = MeasurementKind::P_inj;
    int bus = -1;        // injections
    int from_bus = -1;   // flows
    int to_bus = -1;

    std::string id() const;
    static MeasurementDescriptor parse(const std::string& id);
    bool operator==(const MeasurementDescriptor&) const = default;
};

// One timestep of the measurement vector plus its observability mask.
// mask[i] == false marks a missing entry; its value slot holds NaN so any
// consumer that forgets the mask trips the finiteness checks downstream.
struct MeasurementFrame {
    std::vector<double> values;
    std::vector<std::uint8_t> mask;

    std::size_t size() const { return values.size(); }
    bool complete() const;
    static MeasurementFrame observed(std::vector<double> values);
};

// Net complex power arriving at / leaving each bus, generation positive.
struct InjectionSpec {
    std::vector<double> p;
    std::vector<double> q;

    static InjectionSpec zeros(int bus_count);
};

// The sum convention for bus injections. `net_flow_sum` is the physical net
// injection sum_j P_ij over lines leaving bus i and is what the power-flow
// solver balances against specified injections. `difference_form` instead
// evaluates sum_j (P_ji - P_ij) over incident lines; it is kept selectable
// because some formulations state the injection that way.
enum class InjectionConvention { net_flow_sum, difference_form };

// Directed branch flow per-unit: (P_ij, Q_ij) measured at the `from` end.
std::pair<double, double> line_flow(const Network& net, const StateVector& x, int from, int to);

void bus_injections(const Network& net, const StateVector& x, std::vector<double>& p_out,
                    std::vector<double>& q_out,
                    InjectionConvention convention = InjectionConvention::net_flow_sum);

MeasurementFrame measurement_function(const Network& net, const StateVector& x,
                                      const std::vector<MeasurementDescriptor>& descriptors,
                                      InjectionConvention convention =
                                          InjectionConvention::net_flow_sum);

struct PowerFlowResult {
    StateVector state;
    int iterations = 0;
    double max_mismatch = 0.0;
    std::vector<double> mismatch_history;  // max-abs mismatch per iteration
};

// Newton-Raphson from a flat start with an analytic Jacobian. All non-slack
// buses are PQ. Throws ConvergenceError (with the final mismatch) on failure
// and NumericError on a singular Jacobian.
PowerFlowResult solve_power_flow(const Network& net, const InjectionSpec& specified,
                                 double slack_voltage = 1.0, double tolerance = 1e-8,
                                 int max_iterations = 30);

struct ImpedanceRanges {
    double r_min = 0.01;
    double r_max = 0.05;
    double x_min = 0.02;
    double x_max = 0.08;
};

// Seeded random radial feeder rooted at the slack bus (bus 0): n-1 lines,
// connected, acyclic.
Network generate_feeder(int bus_count, std::uint64_t seed, ImpedanceRanges ranges = {});

// Instruments floor(fraction * n) seeded random buses: P/Q injection at each
// selected bus plus directed P/Q flows on each incident line end.
std::vector<MeasurementDescriptor> place_sensors(const Network& net, double fraction,
                                                 std::uint64_t seed);

// Descriptor list file: one descriptor id per line.
std::vector<MeasurementDescriptor> descriptors_from_file(const std::string& path);
void descriptors_to_file(const std::vector<MeasurementDescriptor>& descriptors,
                         const std::string& path);

}  // namespace dsse::grid

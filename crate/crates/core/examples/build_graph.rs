//! Builds the skeleton graph for a joint layout and prints its normalized
//! adjacency.
//!
//! cargo run --example build_graph -- [coco18|kinect20|path/to/layout.toml]

use skelfall::graph::build_graph;
use skelfall::skeleton::JointLayout;

fn main() -> skelfall::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "coco18".into());
    let layout = JointLayout::resolve(&name)?;
    let graph = build_graph(&layout);
    let adj = graph.normalized_adjacency();
    println!(
        "{}: {} joints, {} edges",
        layout.name,
        graph.joint_count(),
        graph.edges().len()
    );
    for i in 0..graph.joint_count() {
        let row: Vec<String> = (0..graph.joint_count())
            .map(|j| match adj.at(&[i, j]) {
                0.0 => "  .  ".into(),
                x => format!("{x:.3}"),
            })
            .collect();
        println!("{i:>2} {}", row.join(" "));
    }
    Ok(())
}

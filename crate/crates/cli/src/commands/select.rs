use air_core::reduction::{effective_top_q, select_top_q};

use crate::args::SelectArgs;
use crate::error::CliResult;
use crate::output::{write_npy, Table};
use crate::{read_matrix, resolve_config};

pub fn run(a: &SelectArgs) -> CliResult<()> {
    let cfg = resolve_config(&a.config)?;
    let hidden = read_matrix(&a.hidden)?;
    let q = effective_top_q(cfg.top_q, hidden.rows());
    let reduced = select_top_q(&hidden, q)?;

    let mut t = Table::new(&["index", "distance"])?;
    for &i in &reduced.selected_indices {
        t.row([i.to_string(), reduced.distances[i].to_string()])?;
    }
    let csv_path = a.out_dir.join("retained.csv");
    let npy_path = a.out_dir.join("h_prime.npy");
    write_npy(&npy_path, &reduced.h_prime)?;
    t.save(&csv_path)?;
    println!(
        "kept {} of {} tokens -> {}, {}",
        q,
        hidden.rows(),
        csv_path.display(),
        npy_path.display()
    );
    Ok(())
}

use anyhow::Result;

use crate::io;
use crate::InspectArgs;

pub fn run(args: InspectArgs) -> Result<()> {
    let cap = if args.max_out_degree == 0 {
        None
    } else {
        Some(args.max_out_degree)
    };
    let kg = io::load_graph(&args.train, args.valid.as_deref(), args.test.as_deref(), cap)?;
    let report = kg.sparsity_report();
    if let Some(dir) = &args.dump_vocab {
        io::dump_vocab(dir, kg.vocab())?;
    }
    match &args.out {
        Some(path) => io::write_json(path, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

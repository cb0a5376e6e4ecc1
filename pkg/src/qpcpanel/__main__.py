from qpcpanel.cli import main

raise SystemExit(main())
